"""Binary cross-entropy with optional L2 weight penalty."""

from __future__ import annotations

import numpy as np

P_MIN = 1e-7


def l2_penalty(l2_terms):
    """Sum of lambda * ||W||^2 and the matching gradients 2 * lambda * W."""
    value = 0.0
    grads = []
    for lam, w in l2_terms:
        value += lam * float(np.sum(w * w))
        grads.append(2.0 * lam * w)
    return value, grads


def bce_loss(prediction, label, l2_terms=()):
    """Mean binary cross-entropy over the batch plus the L2 penalty.

    Returns (loss, d loss / d prediction). Predictions are clamped to
    [1e-7, 1 - 1e-7]; the gradient is taken at the clamped value so a
    saturated output still receives a training signal.
    """
    p = np.clip(np.asarray(prediction, dtype=np.float64), P_MIN, 1.0 - P_MIN)
    y = np.asarray(label, dtype=np.float64).reshape(p.shape)
    n = p.shape[0] if p.ndim else 1
    ce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
    penalty, _ = l2_penalty(l2_terms)
    return float(np.sum(ce) / n) + penalty, grad
