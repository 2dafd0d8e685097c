"""First-order optimizers with resettable state and learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OPTIMIZERS = ("sgd", "momentum", "adam")


@dataclass(frozen=True)
class LearningRate:
    """Constant (``final=None``) or exponential decay from ``initial`` to ``final``."""

    initial: float = 1e-2
    final: float | None = None

    def __post_init__(self):
        if not self.initial > 0 or (self.final is not None and not self.final > 0):
            raise ValueError("learning rates must be positive")

    def at(self, step: int, total_steps: int) -> float:
        if self.final is None or total_steps <= 1:
            return self.initial
        frac = step / (total_steps - 1)
        return self.initial * math.exp(frac * math.log(self.final / self.initial))

    @classmethod
    def from_config(cls, spec) -> "LearningRate":
        if isinstance(spec, (int, float)):
            return cls(float(spec))
        return cls(float(spec["initial"]), None if spec.get("final") is None else float(spec["final"]))


class Optimizer:
    """Updates arrays in place. State is keyed by parameter name; ``reset``
    returns the optimizer to its freshly constructed state."""

    def __init__(self, kind: str = "adam", momentum: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
        self.kind = kind
        self.momentum = momentum
        self.beta2 = beta2
        self.eps = eps
        self.reset()

    def reset(self) -> None:
        self.state: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        for key, g in grads.items():
            p = params[key]
            if self.kind == "sgd":
                p -= lr * g
            elif self.kind == "momentum":
                v = self.state.get(key)
                v = g.copy() if v is None else self.momentum * v + g
                self.state[key] = v
                p -= lr * v
            else:
                m, v = self.state.get(key, (np.zeros_like(g), np.zeros_like(g)))
                m = self.momentum * m + (1 - self.momentum) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self.state[key] = (m, v)
                mhat = m / (1 - self.momentum ** self.t)
                vhat = v / (1 - self.beta2 ** self.t)
                p -= lr * mhat / (np.sqrt(vhat) + self.eps)
