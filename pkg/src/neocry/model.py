"""The three-branch N-CNN, its training loop, and the cepstral-feature
linear baseline."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .dsp import lpcc, mfcc
from .errors import TrainingDivergenceError
from .nnet import (ConcatChannels, Conv2D, Dense, Dropout, Flatten, Input, MaxPool, AvgPool,
                   ModelGraph, ReLU, RMSprop, Sigmoid, bce_loss)
from .nnet.functional import sigmoid

# Total parameters reported for N-CNN in the original evaluation table.
REPORTED_NCNN_PARAMS = 72593

# Parameter count of the default architecture below, derived by hand from the
# layer dimensions before any code ran:
#   right conv   5*5*1*64  + 64  =  1664
#   centre conv1 5*5*1*16  + 16  =   416
#   centre conv2 5*5*16*16 + 16  =  6416
#   head conv    5*5*81*16 + 16  = 32416
#   dense 16     6*6*16*16 + 16  =  9232
#   dense 1      16*1      + 1   =    17
#                                  -----
#                                  50161
NCNN_PARAM_COUNT = 50161


@dataclass(frozen=True)
class NcnnConfig:
    input_shape: tuple = (120, 120, 1)
    left_pool: int = 10
    right_filters: int = 64
    right_kernel: int = 5
    right_pool: int = 10
    center_filters: tuple = (16, 16)
    center_kernel: int = 5
    center_pools: tuple = (2, 5)
    head_filters: int = 16
    head_kernel: int = 5
    head_pool: int = 2
    dense_units: int = 16
    l2: float = 0.01
    dropout_keep: float = 0.5
    pooling: str = "max"
    seed: int = 0

    def __post_init__(self):
        if self.pooling not in ("max", "avg"):
            raise ValueError(f"pooling must be 'max' or 'avg', got {self.pooling!r}")
        if self.l2 < 0 or not 0 < self.dropout_keep <= 1:
            raise ValueError("need l2 >= 0 and dropout_keep in (0, 1]")


def build_ncnn(config: NcnnConfig = NcnnConfig()) -> ModelGraph:
    """Wire and initialize N-CNN.

    Three branches read the input image: a bare pooling branch, a single
    wide convolution, and two stacked narrow convolutions. Their feature
    maps are stacked along channels and pass through one more
    convolution/pooling stage before the dense head.
    """
    pool = MaxPool if config.pooling == "max" else AvgPool
    g = ModelGraph(meta={"architecture": "ncnn", "config": _jsonable(asdict(config))})
    g.add("input", Input(config.input_shape))

    g.add("left_pool", pool(config.left_pool), ["input"])

    def conv_block(prefix, source, filters, kernel, size):
        # relu(maxpool(z)) == maxpool(relu(z)); pooling first keeps the
        # activation pass on the small tensor
        g.add(f"{prefix}_conv", Conv2D(filters, kernel), [source])
        if config.pooling == "max":
            g.add(f"{prefix}_pool", pool(size), [f"{prefix}_conv"])
            return g.add(f"{prefix}_relu", ReLU(), [f"{prefix}_pool"])
        g.add(f"{prefix}_relu", ReLU(), [f"{prefix}_conv"])
        return g.add(f"{prefix}_pool", pool(size), [f"{prefix}_relu"])

    right = conv_block("right", "input", config.right_filters, config.right_kernel,
                       config.right_pool)
    prev = "input"
    for i, (filters, size) in enumerate(zip(config.center_filters, config.center_pools), 1):
        prev = conv_block(f"center{i}", prev, filters, config.center_kernel, size)

    g.add("merge", ConcatChannels(), ["left_pool", right, prev])
    head = conv_block("head", "merge", config.head_filters, config.head_kernel, config.head_pool)
    g.add("flatten", Flatten(), [head])
    g.add("fc", Dense(config.dense_units, l2=config.l2), ["flatten"])
    g.add("fc_relu", ReLU(), ["fc"])
    g.add("dropout", Dropout(config.dropout_keep), ["fc_relu"])
    # the regularizer belongs to the hidden dense block; the output unit is free
    g.add("logit", Dense(1), ["dropout"])
    g.add("prob", Sigmoid(), ["logit"])

    g.initialize(np.random.default_rng(config.seed))
    return g


def model_summary(model: ModelGraph) -> str:
    delta = model.param_count - REPORTED_NCNN_PARAMS
    return (model.summary()
            + f"\nreported N-CNN parameters: {REPORTED_NCNN_PARAMS} (difference {delta:+d})")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def as_batch(images, channels: int = 1) -> np.ndarray:
    """Stack 2-D images (or SpectrogramImage objects) into (N, H, W, C)."""
    arrs = [getattr(im, "pixels", im) for im in images]
    x = np.asarray(np.stack(arrs), dtype=np.float64)
    if x.ndim == 3:
        x = x[..., None]
    if x.shape[-1] == 1 and channels > 1:
        x = np.repeat(x, channels, axis=-1)
    return x


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    deterministic: bool = True
    augment_training_only: bool = True
    rho: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")


def train(model: ModelGraph, images, labels, config: TrainConfig = TrainConfig(), progress=None):
    """Mini-batch RMSprop on binary cross-entropy.

    ``images`` is an (N, H, W, C) array. Returns per-epoch history dicts with
    the mean batch loss and the accuracy of the training-mode predictions.
    """
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0 or x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} images but {y.size} labels")
    if np.unique(y).size < 2:
        raise ValueError("training set holds a single class; refusing to train")
    opt = RMSprop(config.learning_rate, config.rho, config.eps)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(y.size)
        total, correct = 0.0, 0
        for start in range(0, y.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            p = model.forward(xb, training=True, rng=rng)
            terms = model.l2_terms()
            loss, dp = bce_loss(p, yb[:, None], [(lam, w) for _, lam, w in terms])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            model.backward(dp)
            grads = model.gradients()
            for name, lam, w in terms:
                grads[name] = grads[name] + 2.0 * lam * w
            try:
                opt.step(params, grads)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"epoch {epoch}: {exc}") from None
            total += loss * idx.size
            correct += int(np.sum((p[:, 0] > 0.5) == (yb > 0.5)))
        history.append({"epoch": epoch, "loss": total / y.size, "accuracy": correct / y.size})
        if progress is not None:
            progress(history[-1])
    model.meta["optimizer"] = {"learning_rate": opt.learning_rate, "rho": opt.rho, "eps": opt.eps}
    return model, history


def predict(model: ModelGraph, images) -> np.ndarray:
    """Inference-mode probabilities, one per image, in input order.

    Each image goes through the network on its own. BLAS picks different
    blockings for different matrix heights, so batching would let the last
    bits of a score depend on which other images shared the batch.
    """
    x = np.asarray(images, dtype=np.float64)
    out = [model.forward(x[i:i + 1], training=False)[0, 0] for i in range(x.shape[0])]
    return np.asarray(out, dtype=np.float64)


def save_history_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,accuracy\n")
        for h in history:
            fh.write(f"{h['epoch']},{h['loss']!r},{h['accuracy']!r}\n")


# -- handcrafted baseline --------------------------------------------------

def event_features(signal) -> np.ndarray:
    """Per-event statistics: mean and std over frames of 13 MFCCs, then of 12
    LPCCs (50 values)."""
    m = mfcc(signal).values
    c = lpcc(signal).values
    return np.concatenate([m.mean(axis=0), m.std(axis=0), c.mean(axis=0), c.std(axis=0)])


@dataclass(frozen=True)
class BaselineConfig:
    lam: float = 0.01
    epochs: int = 300
    eta0: float = 0.1           # step size schedule eta0 / (1 + lam * eta0 * t)

    def __post_init__(self):
        if self.lam <= 0 or self.epochs < 1 or self.eta0 <= 0:
            raise ValueError("need lam > 0, eta0 > 0 and epochs >= 1")


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    kept: np.ndarray            # boolean mask of features used
    objective: list = field(default_factory=list)

    def decision_function(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        z = np.zeros_like(x)
        z[:, self.kept] = (x[:, self.kept] - self.mean[self.kept]) / self.scale[self.kept]
        return z @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        return sigmoid(self.decision_function(features))

    def to_json(self) -> str:
        return json.dumps({"weights": self.weights.tolist(), "bias": self.bias,
                           "mean": self.mean.tolist(), "scale": self.scale.tolist(),
                           "kept": self.kept.tolist()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        d = json.loads(text)
        return cls(np.array(d["weights"]), float(d["bias"]), np.array(d["mean"]),
                   np.array(d["scale"]), np.array(d["kept"], dtype=bool))


def hinge_objective(w, b, z, s, lam) -> float:
    return 0.5 * lam * float(w @ w) + float(np.mean(np.maximum(0.0, 1.0 - s * (z @ w + b))))


def train_baseline(features, labels, config: BaselineConfig = BaselineConfig()) -> LinearModel:
    """Linear max-margin classifier by full-batch subgradient descent on the
    L2-regularized hinge loss, returning the averaged iterate.

    Features are standardized with the training mean/std; constant features
    are dropped with a warning.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    for cls in (0, 1):
        if np.sum(y == cls) < 2:
            raise ValueError("baseline needs at least 2 events per class")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    kept = scale > 1e-12
    if not kept.all():
        warnings.warn(f"dropping constant feature columns {np.flatnonzero(~kept).tolist()}")
    scale = np.where(kept, scale, 1.0)
    z = np.where(kept, (x - mean) / scale, 0.0)
    s = np.where(y == 1, 1.0, -1.0)
    n, d = z.shape
    w, b = np.zeros(d), 0.0
    w_avg, b_avg = np.zeros(d), 0.0
    objective = []
    for t in range(1, config.epochs + 1):
        # 1 / (lam t) starts at 100 for lam = 0.01, which throws standardized
        # weights around so badly that even the average climbs for a while
        eta = config.eta0 / (1.0 + config.lam * config.eta0 * t)
        viol = s * (z @ w + b) < 1.0
        gw = config.lam * w - (s[viol, None] * z[viol]).sum(axis=0) / n
        gb = -s[viol].sum() / n
        w = w - eta * gw
        b = b - eta * gb
        w_avg += (w - w_avg) / t
        b_avg += (b - b_avg) / t
        objective.append(hinge_objective(w_avg, b_avg, z, s, config.lam))
    return LinearModel(w_avg, float(b_avg), mean, scale, kept, objective)
