"""RMSprop."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingDivergenceError


class RMSprop:
    """acc <- rho * acc + (1 - rho) * g^2;  theta <- theta - lr * g / sqrt(acc + eps)."""

    def __init__(self, learning_rate=1e-4, rho=0.9, eps=1e-8):
        if learning_rate <= 0 or not 0 <= rho < 1 or eps <= 0:
            raise ValueError("need learning_rate > 0, 0 <= rho < 1, eps > 0")
        self.learning_rate = learning_rate
        self.rho = rho
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place. Keys of ``grads`` select what moves."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"non-finite gradient for parameter {name!r}")
            p = params[name]
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        for name, g in grads.items():
            acc = self.acc.get(name)
            if acc is None:
                acc = self.acc[name] = np.zeros_like(g)
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            params[name] -= self.learning_rate * g / np.sqrt(acc + self.eps)
