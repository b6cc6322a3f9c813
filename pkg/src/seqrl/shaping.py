"""Reward normalization: per-source standardization, batch z-scoring, and
the moving-average baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPSILON = 1e-8


class DegenerateRewards(ValueError):
    """Raised when a candidate set carries no learning signal (constant or
    singleton rewards); the caller drops the source for this round."""


def conditional_standardize(rewards) -> np.ndarray:
    """Standardize a per-source reward vector to mean 0, population std 1.

    Requires at least two entries and population std >= EPSILON; the output
    always mixes signs for non-constant input.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError("reward vector must be 1-D")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if r.size < 2:
        raise DegenerateRewards("singleton candidate set")
    std = float(r.std())  # population (divide-by-n) standard deviation
    if std < EPSILON:
        raise DegenerateRewards("constant rewards within tolerance")
    return (r - r.mean()) / std


def batch_zscore(rewards) -> np.ndarray:
    """Z-score across a mixed-source training batch.

    A zero-variance batch yields all zeros rather than an error: the batch
    is still trained on, with no advantage signal.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("reward vector must be non-empty and 1-D")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    std = float(r.std())
    if std < EPSILON:
        return np.zeros_like(r)
    return (r - r.mean()) / std


@dataclass(frozen=True)
class BaselineState:
    mean: float = 0.0
    decay: float = 0.99
    count: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if not np.isfinite(self.mean):
            raise ValueError("baseline mean must be finite")


def baseline_update(state: BaselineState, reward: float) -> tuple[BaselineState, float]:
    """Advantage against the pre-update mean, then decay the mean toward reward."""
    if not np.isfinite(reward):
        raise ValueError("reward must be finite")
    advantage = reward - state.mean
    new_mean = state.decay * state.mean + (1.0 - state.decay) * reward
    return BaselineState(mean=new_mean, decay=state.decay, count=state.count + 1), advantage
