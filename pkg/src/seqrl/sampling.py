"""Worker-side candidate generation: multi-temperature sampling, dedup,
reward scoring, normalization, and robust likelihood factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as policy_model
from .metrics import DEFAULT_METRIC_CONFIG, MetricConfig, RewardSpec, composite_reward
from .shaping import EPSILON, DegenerateRewards, conditional_standardize
from .tasks import TokenSeq, Vocabulary


@dataclass(frozen=True)
class TemperatureGrid:
    """n sampling temperatures evenly spaced over [t_min, t_max]."""

    t_min: float
    t_max: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("temperature grid needs n >= 2")
        if not 0.0 < self.t_min <= self.t_max:
            raise ValueError("need 0 < t_min <= t_max")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n)


@dataclass(frozen=True)
class CandidateSet:
    """Deduplicated samples for one source with behavior log-probs and rewards."""

    source: TokenSeq
    reference: TokenSeq
    candidates: tuple[TokenSeq, ...]
    q: np.ndarray  # log p(y | x; theta_old) at temperature 1
    rewards: np.ndarray  # raw metric rewards, one per candidate
    sampled: int = 0  # grid size that produced this set
    truncated: int = 0  # samples cut off at the length cap

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class Trajectory:
    """One queue item: the Enqueue tuple of the asynchronous generator."""

    source: TokenSeq
    target: TokenSeq
    q: float
    r_bar: float  # normalized reward (raw reward under batch-norm ablation)
    v: float  # robust likelihood factor, 1.0 under the weights-off ablation
    raw_reward: float = 0.0
    version: int = 0  # checkpoint version that generated this item


def generate_candidates(params: dict[str, np.ndarray], cfg: policy_model.ModelConfig,
                        vocab: Vocabulary, source: TokenSeq, reference: TokenSeq,
                        grid: TemperatureGrid, reward: RewardSpec,
                        rng: np.random.Generator,
                        metric_cfg: MetricConfig = DEFAULT_METRIC_CONFIG,
                        max_len: int | None = None) -> CandidateSet:
    """Sample one candidate per grid temperature and score the unique ones.

    q comes from the same forward pass that produced the sample (the
    untempered per-step log-probs of the drawn tokens), so it is exactly
    the behavior policy's log-likelihood at temperature 1.
    """
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    temps = grid.values
    token_lists, terminated, q_all = policy_model.sample_batch(
        params, cfg, list(source.tokens), temps, rng, max_len=max_len
    )
    seen: dict[tuple, int] = {}
    kept: list[TokenSeq] = []
    kept_q: list[float] = []
    truncated = 0
    for i, (toks, term) in enumerate(zip(token_lists, terminated)):
        if not term:
            truncated += 1
        key = (tuple(toks), term)
        if key in seen:
            continue
        seen[key] = i
        kept.append(vocab.seq(toks, terminated=term))
        kept_q.append(float(q_all[i]))
    rewards = np.array([composite_reward(c, reference, reward, metric_cfg) for c in kept])
    return CandidateSet(
        source=source,
        reference=reference,
        candidates=tuple(kept),
        q=np.array(kept_q),
        rewards=rewards,
        sampled=grid.n,
        truncated=truncated,
    )


def mad_factors(q) -> np.ndarray:
    """v_i = exp(-|q_i - median(q)| / MAD(q)); all ones when MAD < EPSILON.

    The median absolute deviation is the median of |q - median(q)|; an even
    count takes the mean of the two middle order statistics (numpy median).
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("q must be a non-empty 1-D array")
    if not np.all(np.isfinite(q)):
        raise ValueError("q entries must be finite")
    center = np.median(q)
    scale = np.median(np.abs(q - center))
    if scale < EPSILON:
        return np.ones_like(q)
    # the floor keeps v strictly positive where exp underflows to 0
    return np.maximum(np.exp(-np.abs(q - center) / scale), np.finfo(np.float64).tiny)


def build_trajectories(cs: CandidateSet, version: int = 0,
                       normalize: bool = True, weights: bool = True) -> list[Trajectory]:
    """Trajectories ready to enqueue; [] when the set is degenerate.

    normalize=False enqueues raw rewards (the learner z-scores per batch);
    weights=False pins v = 1 so the learner weight reduces to min(u, 2).
    Under batch normalization a singleton set is kept: the per-source
    candidate-set statistics are unused in that mode.
    """
    if normalize:
        try:
            r_bar = conditional_standardize(cs.rewards)
        except DegenerateRewards:
            return []
    else:
        r_bar = np.asarray(cs.rewards, dtype=np.float64)
    v = mad_factors(cs.q) if weights else np.ones(len(cs))
    return [
        Trajectory(
            source=cs.source,
            target=cs.candidates[i],
            q=float(cs.q[i]),
            r_bar=float(r_bar[i]),
            v=float(v[i]),
            raw_reward=float(cs.rewards[i]),
            version=version,
        )
        for i in range(len(cs))
    ]
