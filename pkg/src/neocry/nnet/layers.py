"""Layer objects wrapping the kernels in :mod:`functional`.

A layer caches whatever its backward pass needs during ``forward`` and
stores parameter gradients in ``self.grads`` during ``backward``.
Shapes passed to ``output_shape`` exclude the batch axis.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from ..errors import ShapeError


class Layer:
    kind = "Layer"
    l2 = 0.0

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.need_input_grad = True

    def spec(self) -> dict:
        return {}

    def output_shape(self, in_shapes):
        return in_shapes[0]

    def init_params(self, in_shapes, rng):
        pass

    def forward(self, xs, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items())
        return f"{self.kind}({args})"


class Input(Layer):
    kind = "Input"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def spec(self):
        return {"shape": list(self.shape)}

    def output_shape(self, in_shapes):
        return self.shape

    def forward(self, xs, training=False, rng=None):
        x = xs[0]
        if tuple(x.shape[1:]) != self.shape:
            raise ShapeError(f"model expects inputs of shape {self.shape}, got {tuple(x.shape[1:])}")
        return x


def he_uniform(shape, fan_in, rng):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, filters, kernel, stride=1, padding="same"):
        super().__init__()
        self.filters = filters
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    @property
    def pad(self):
        if self.padding == "same":
            return F.same_padding(self.kernel)
        if self.padding == "valid":
            return 0
        return int(self.padding)

    def spec(self):
        return {"filters": self.filters, "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding}

    def output_shape(self, in_shapes):
        h, w, _ = in_shapes[0]
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = F.conv_output_size(h, k, s, p), F.conv_output_size(w, k, s, p)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self!r} cannot be applied to input {in_shapes[0]}")
        return (ho, wo, self.filters)

    def init_params(self, in_shapes, rng):
        cin = in_shapes[0][2]
        fan_in = self.kernel * self.kernel * cin
        self.params["W"] = he_uniform((self.kernel, self.kernel, cin, self.filters), fan_in, rng)
        self.params["b"] = np.zeros(self.filters)

    def forward(self, xs, training=False, rng=None):
        out, self._cache = F.conv2d_forward(xs[0], self.params["W"], self.params["b"],
                                            self.stride, self.pad)
        return out

    def backward(self, grad):
        dx, self.grads["W"], self.grads["b"] = F.conv2d_backward(grad, self._cache,
                                                                 self.need_input_grad)
        self._cache = None
        return [dx]


class MaxPool(Layer):
    kind = "MaxPool"

    def __init__(self, size, stride=None):
        super().__init__()
        self.size = size
        self.stride = size if stride is None else stride

    def spec(self):
        return {"size": self.size, "stride": self.stride}

    def output_shape(self, in_shapes):
        h, w, c = in_shapes[0]
        if self.size > h or self.size > w:
            raise ShapeError(f"pool window {self.size} larger than input {in_shapes[0]}")
        return ((h - self.size) // self.stride + 1, (w - self.size) // self.stride + 1, c)

    def forward(self, xs, training=False, rng=None):
        out, self._cache = F.maxpool_forward(xs[0], self.size, self.stride)
        return out

    def backward(self, grad):
        dx = F.maxpool_backward(grad, self._cache)
        self._cache = None
        return [dx]


class AvgPool(MaxPool):
    kind = "AvgPool"

    def forward(self, xs, training=False, rng=None):
        out, self._cache = F.avgpool_forward(xs[0], self.size, self.stride)
        return out

    def backward(self, grad):
        dx = F.avgpool_backward(grad, self._cache)
        self._cache = None
        return [dx]


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units, l2=0.0):
        super().__init__()
        self.units = units
        self.l2 = l2

    def spec(self):
        return {"units": self.units, "l2": self.l2}

    def output_shape(self, in_shapes):
        if len(in_shapes[0]) != 1:
            raise ShapeError(f"Dense needs a flat input, got {in_shapes[0]}")
        return (self.units,)

    def init_params(self, in_shapes, rng):
        fan_in = in_shapes[0][0]
        self.params["W"] = he_uniform((fan_in, self.units), fan_in, rng)
        self.params["b"] = np.zeros(self.units)

    def forward(self, xs, training=False, rng=None):
        out, self._x = F.dense_forward(xs[0], self.params["W"], self.params["b"])
        return out

    def backward(self, grad):
        dx, self.grads["W"], self.grads["b"] = F.dense_backward(grad, self._x, self.params["W"])
        self._x = None
        return [dx]


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, xs, training=False, rng=None):
        out, self._mask = F.relu_forward(xs[0])
        return out

    def backward(self, grad):
        return [F.relu_backward(grad, self._mask)]


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, xs, training=False, rng=None):
        self._y = F.sigmoid(xs[0])
        return self._y

    def backward(self, grad):
        return [F.sigmoid_backward(grad, self._y)]


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, keep):
        super().__init__()
        if not 0 < keep <= 1:
            raise ValueError(f"keep probability must be in (0, 1], got {keep}")
        self.keep = keep

    def spec(self):
        return {"keep": self.keep}

    def forward(self, xs, training=False, rng=None):
        if training and self.keep < 1.0 and rng is None:
            raise ValueError("dropout in training mode needs an explicit rng")
        out, self._mask = F.dropout_forward(xs[0], self.keep, rng, training)
        return out

    def backward(self, grad):
        return [F.dropout_backward(grad, self._mask)]


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, in_shapes):
        return (int(np.prod(in_shapes[0])),)

    def forward(self, xs, training=False, rng=None):
        self._shape = xs[0].shape
        return xs[0].reshape(xs[0].shape[0], -1)

    def backward(self, grad):
        return [grad.reshape(self._shape)]


class ConcatChannels(Layer):
    kind = "ConcatChannels"

    def output_shape(self, in_shapes):
        if len({s[:2] for s in in_shapes}) != 1:
            raise ShapeError(f"branch spatial dims differ at merge: {list(in_shapes)}")
        return in_shapes[0][:2] + (sum(s[2] for s in in_shapes),)

    def forward(self, xs, training=False, rng=None):
        out, self._widths = F.concat_channels(xs)
        return out

    def backward(self, grad):
        return F.concat_channels_backward(grad, self._widths)


LAYER_TYPES = {cls.kind: cls for cls in
               (Input, Conv2D, MaxPool, AvgPool, Dense, ReLU, Sigmoid, Dropout, Flatten,
                ConcatChannels)}


def layer_from_spec(kind: str, spec: dict) -> Layer:
    cls = LAYER_TYPES[kind]
    if kind == "Input":
        return cls(tuple(spec["shape"]))
    return cls(**spec)
