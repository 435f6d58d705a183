"""Minimal NHWC tensor engine with hand-derived gradients."""

from .functional import (avgpool_backward, avgpool_forward, concat_channels,
                         concat_channels_backward, conv2d_backward, conv2d_forward,
                         dense_backward, dense_forward, dropout_backward, dropout_forward,
                         maxpool_backward, maxpool_forward, relu_backward, relu_forward,
                         sigmoid, sigmoid_backward)
from .graph import ModelGraph
from .layers import (AvgPool, ConcatChannels, Conv2D, Dense, Dropout, Flatten, Input,
                     MaxPool, ReLU, Sigmoid)
from .loss import bce_loss, l2_penalty
from .optim import RMSprop
