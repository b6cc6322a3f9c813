"""Adam ascent with linear warmup and global-norm gradient clipping.

step() moves parameters in the direction of the supplied gradients, so
objectives hand over the gradient of the quantity they want maximized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 3e-4
    warmup_steps: int = 100
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.warmup_steps < 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive, warmup_steps non-negative")


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


class AdamAscent:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def lr_at(self, t: int) -> float:
        """Learning rate after t updates: linear warmup, then constant."""
        if self.cfg.warmup_steps == 0:
            return self.cfg.lr
        return self.cfg.lr * min(1.0, t / self.cfg.warmup_steps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, float]:
        """Apply one ascent update in place; returns step diagnostics."""
        self.t += 1
        gnorm = global_norm(grads)
        scale = 1.0 if gnorm <= self.cfg.clip_norm else self.cfg.clip_norm / gnorm
        lr = self.lr_at(self.t)
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            g = g * scale
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] += lr * (m / bias1) / (np.sqrt(v / bias2) + self.cfg.eps)
        return {"lr": lr, "grad_norm": gnorm, "clip_scale": scale}
