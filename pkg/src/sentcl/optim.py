"""SGD with momentum (weight decay folded into the gradient) and lr schedules."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass
class ScheduleConfig:
    base_lr: float
    total_steps: int
    kind: str = "cosine"  # "cosine" | "constant"

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if self.kind not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def lr_at(step, cfg):
    """Learning rate at a step; steps past total_steps clamp to the final value."""
    step = min(max(step, 0), cfg.total_steps)
    if cfg.kind == "constant":
        return cfg.base_lr
    return cfg.base_lr * 0.5 * (1.0 + np.cos(np.pi * step / cfg.total_steps))


class SGDMomentum:
    """Classic momentum SGD: v <- mu*v + (g + wd*theta); theta <- theta - lr*v.

    Velocity buffers are zero-initialized, one per parameter, matching
    shapes exactly. No dampening, no Nesterov.
    """

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr):
        if lr <= 0:
            raise ValueError("lr must be positive")
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {p.data.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= lr * v

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
