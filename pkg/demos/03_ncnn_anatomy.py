"""
Inside the three-branch network
===============================

Build the N-CNN, look at its shapes and parameter count, check one layer's
gradient against finite differences, and fit a handful of images.

Run:  python demos/03_ncnn_anatomy.py
"""

import numpy as np

from neocry.model import NcnnConfig, TrainConfig, build_ncnn, model_summary, predict, train
from neocry.nnet import functional as F

# %%
# The left branch only pools the image, the right branch is one 5x5 conv
# with 64 filters, the centre stacks two 16-filter convs. All three end at
# 12x12 and are stacked into 1 + 64 + 16 = 81 channels.
net = build_ncnn()
print(model_summary(net))

shapes = net.infer_shapes()
for name in ("left_pool", "right_relu", "center2_relu", "merge", "head_relu"):
    print(f"{name:13s} {shapes[name]}")

# %%
# Gradients are written by hand, so compare one with central differences
rng = np.random.default_rng(0)
x = rng.normal(size=(2, 7, 7, 3))
W = rng.normal(size=(3, 3, 3, 4))
b = rng.normal(size=4)
out, cache = F.conv2d_forward(x, W, b, 1, 1)
g = rng.normal(size=out.shape)
dx, dW, db = F.conv2d_backward(g, cache)

eps = 1e-5
i = (0, 1, 2, 1)
W[i] += eps
up = np.sum(g * F.conv2d_forward(x, W, b, 1, 1)[0])
W[i] -= 2 * eps
down = np.sum(g * F.conv2d_forward(x, W, b, 1, 1)[0])
W[i] += eps
print(f"dL/dW{i}: analytic {dW[i]:.8f}, numeric {(up - down) / (2 * eps):.8f}")

# %%
# A scaled-down copy (40x40 input, fewer filters) memorizes eight random
# images in a few seconds
small = NcnnConfig(input_shape=(40, 40, 1), right_filters=8, center_filters=(4, 4),
                   head_filters=4)
images = rng.uniform(size=(8, 40, 40, 1))
labels = np.array([0, 1] * 4)
model = build_ncnn(small)
_, history = train(model, images, labels,
                   TrainConfig(learning_rate=1e-3, batch_size=8, epochs=150, seed=1))
for h in history[::30]:
    print(f"epoch {h['epoch']:3d}  loss {h['loss']:.4f}")
print("inference scores:", np.round(predict(model, images), 3))
print("labels:          ", labels)
