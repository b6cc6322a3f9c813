"""Sequence-level training objectives and their gradient steps.

Every step function returns (gradients, stats) where gradients point in
the ascent direction of the objective; the optimizer adds them.  The
off-policy step treats its importance weight as a stop-gradient constant,
while the clipped-surrogate step lets the ratio carry gradient — that
asymmetry is the point of the two designs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, collect_grads, score_pairs, sequence_logprobs_t, wrap_params
from .sampling import CandidateSet, Trajectory
from .shaping import BaselineState, baseline_update, batch_zscore

U_CAP = 1e6
W_CAP = 2.0


@dataclass(frozen=True)
class PpoConfig:
    epsilon: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass(frozen=True)
class MrtConfig:
    sample_count: int = 5

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("sample_count must be at least 2")


@dataclass
class StepStats:
    """Per-step diagnostics; averaged between metric-log rows."""

    batch_size: int = 0
    mean_reward: float = 0.0
    mean_rbar: float = 0.0
    mean_u: float = 1.0
    mean_v: float = 1.0
    mean_w: float = 1.0
    clip_frac: float = 0.0
    mean_logp: float = 0.0
    extra: dict = field(default_factory=dict)


def staleness_ratio(p, q):
    """u = exp(p - q), capped at U_CAP before any downstream truncation."""
    diff = np.minimum(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64),
                      math.log(U_CAP))
    out = np.exp(diff)
    return float(out) if out.ndim == 0 else out


def mad_loss_weight(u, v):
    """min(u*v, 2): the truncated robust importance weight, a constant."""
    return np.minimum(np.asarray(u) * np.asarray(v), W_CAP)


def weighted_nll_grad(params: dict[str, np.ndarray], cfg: ModelConfig,
                      sources: list[list[int]], targets: list[list[int]],
                      terminated: list[bool], weights: np.ndarray,
                      dropout_rng: np.random.Generator | None = None
                      ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradient of (1/B) * sum_i weights_i * log p(y_i | x_i).

    Weights are constants (no gradient flows through them).  Returns the
    gradient dict and the per-sequence log-probs seen during the pass.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    tp = wrap_params(params, trainable=True)
    with ad.Tape() as tape:
        logp = sequence_logprobs_t(tp, cfg, sources, targets, terminated, dropout_rng)
        loss = ad.mul(ad.tsum(ad.mul(logp, weights)), 1.0 / len(sources))
        tape.backward(loss)
    return collect_grads(tp), logp.data.copy()


def _split_batch(batch: list[Trajectory]) -> tuple[list, list, list]:
    sources = [list(t.source.tokens) for t in batch]
    targets = [list(t.target.tokens) for t in batch]
    terminated = [t.target.terminated for t in batch]
    return sources, targets, terminated


def mad_step(params: dict[str, np.ndarray], cfg: ModelConfig, batch: list[Trajectory],
             *, reward_norm: str = "conditional",
             dropout_rng: np.random.Generator | None = None
             ) -> tuple[dict[str, np.ndarray], StepStats]:
    """Off-policy update with stop-gradient truncated importance weights.

    Per example: weight = min(u*v, 2) * r_bar with u = exp(p - q) scored
    against the current parameters (dropout off), then one dropout-on
    weighted log-likelihood gradient.  reward_norm="batch" covers the
    ablation where trajectories carry raw rewards that are z-scored across
    the batch here instead of per source at the worker.
    """
    if not batch:
        raise ValueError("empty batch")
    sources, targets, terminated = _split_batch(batch)
    q = np.array([t.q for t in batch])
    v = np.array([t.v for t in batch])
    p = score_pairs(params, cfg, sources, targets, terminated)
    u = staleness_ratio(p, q)
    w = mad_loss_weight(u, v)
    if np.any(w > W_CAP):
        raise AssertionError("importance weight exceeded the truncation cap")
    if reward_norm == "batch":
        r_bar = batch_zscore(np.array([t.r_bar for t in batch]))
    elif reward_norm == "conditional":
        r_bar = np.array([t.r_bar for t in batch])
    else:
        raise ValueError(f"unknown reward_norm {reward_norm!r}")
    grads, logp = weighted_nll_grad(params, cfg, sources, targets, terminated,
                                    w * r_bar, dropout_rng)
    stats = StepStats(
        batch_size=len(batch),
        mean_reward=float(np.mean([t.raw_reward for t in batch])),
        mean_rbar=float(r_bar.mean()),
        mean_u=float(u.mean()),
        mean_v=float(v.mean()),
        mean_w=float(w.mean()),
        clip_frac=float((u * v > W_CAP).mean()),
        mean_logp=float(logp.mean()),
    )
    return grads, stats


def ppo_step(params: dict[str, np.ndarray], cfg: ModelConfig, batch: list[Trajectory],
             ppo_cfg: PpoConfig, *, dropout_rng: np.random.Generator | None = None
             ) -> tuple[dict[str, np.ndarray], StepStats]:
    """Clipped-surrogate update; the ratio u = exp(p - q) carries gradient.

    Rewards are z-scored across the batch; the ascent objective is
    mean(min(u * rt, clip(u, 1-eps, 1+eps) * rt)).
    """
    if not batch:
        raise ValueError("empty batch")
    sources, targets, terminated = _split_batch(batch)
    q = np.array([t.q for t in batch])
    rt = batch_zscore(np.array([t.raw_reward for t in batch]))
    tp = wrap_params(params, trainable=True)
    with ad.Tape() as tape:
        logp = sequence_logprobs_t(tp, cfg, sources, targets, terminated, dropout_rng)
        u = ad.exp(ad.add(logp, -q))
        unclipped = ad.mul(u, rt)
        clipped = ad.mul(ad.clip(u, 1.0 - ppo_cfg.epsilon, 1.0 + ppo_cfg.epsilon), rt)
        objective = ad.mul(ad.tsum(ad.minimum(unclipped, clipped)), 1.0 / len(batch))
        tape.backward(objective)
    u_val = np.exp(logp.data - q)
    stats = StepStats(
        batch_size=len(batch),
        mean_reward=float(np.mean([t.raw_reward for t in batch])),
        mean_rbar=float(rt.mean()),
        mean_u=float(u_val.mean()),
        mean_v=1.0,
        mean_w=float(np.clip(u_val, 1.0 - ppo_cfg.epsilon, 1.0 + ppo_cfg.epsilon).mean()),
        clip_frac=float((np.abs(u_val - 1.0) > ppo_cfg.epsilon).mean()),
        mean_logp=float(logp.data.mean()),
    )
    return collect_grads(tp), stats


def mrt_step(params: dict[str, np.ndarray], cfg: ModelConfig, sets: list[CandidateSet],
             *, dropout_rng: np.random.Generator | None = None
             ) -> tuple[dict[str, np.ndarray], StepStats]:
    """Minimum-risk update: ascends sum_i r_i * p_i / sum_j p_j per source.

    Probabilities renormalize within each candidate set via a softmax over
    the sequence log-probs.  Sets with fewer than two unique candidates are
    skipped; at least one usable set is required.
    """
    usable = [cs for cs in sets if len(cs) >= 2]
    if not usable:
        raise ValueError("no candidate set with two or more unique samples")
    sources, targets, terminated, rewards, bounds = [], [], [], [], []
    for cs in usable:
        bounds.append((len(sources), len(sources) + len(cs)))
        for cand in cs.candidates:
            targets.append(list(cand.tokens))
            terminated.append(cand.terminated)
        sources.extend([list(cs.source.tokens)] * len(cs))
        rewards.append(np.asarray(cs.rewards, dtype=np.float64))
    tp = wrap_params(params, trainable=True)
    with ad.Tape() as tape:
        logp = sequence_logprobs_t(tp, cfg, sources, targets, terminated, dropout_rng)
        total = None
        for (start, stop), r in zip(bounds, rewards):
            weights = ad.softmax(ad.narrow(logp, start, stop))
            term = ad.tsum(ad.mul(weights, r))
            total = term if total is None else ad.add(total, term)
        objective = ad.mul(total, 1.0 / len(usable))
        tape.backward(objective)
    all_rewards = np.concatenate(rewards)
    stats = StepStats(
        batch_size=len(sources),
        mean_reward=float(all_rewards.mean()),
        mean_rbar=float(all_rewards.mean()),
        mean_logp=float(logp.data.mean()),
        extra={"sets": len(usable), "skipped_sets": len(sets) - len(usable)},
    )
    return collect_grads(tp), stats


def reinforce_step(params: dict[str, np.ndarray], cfg: ModelConfig,
                   batch: list[tuple], baseline: BaselineState,
                   *, dropout_rng: np.random.Generator | None = None
                   ) -> tuple[dict[str, np.ndarray], BaselineState, StepStats]:
    """On-policy advantage update against a moving-average baseline.

    batch entries are (source TokenSeq, sample TokenSeq, reward).  The
    baseline updates example by example in batch order, each advantage
    taken against the pre-update mean.
    """
    if not batch:
        raise ValueError("empty batch")
    advantages = []
    for _, _, reward in batch:
        baseline, adv = baseline_update(baseline, float(reward))
        advantages.append(adv)
    sources = [list(src.tokens) for src, _, _ in batch]
    targets = [list(tgt.tokens) for _, tgt, _ in batch]
    terminated = [tgt.terminated for _, tgt, _ in batch]
    grads, logp = weighted_nll_grad(params, cfg, sources, targets, terminated,
                                    np.array(advantages), dropout_rng)
    rewards = np.array([r for _, _, r in batch], dtype=np.float64)
    stats = StepStats(
        batch_size=len(batch),
        mean_reward=float(rewards.mean()),
        mean_rbar=float(np.mean(advantages)),
        mean_logp=float(logp.mean()),
        extra={"baseline": baseline.mean},
    )
    return grads, baseline, stats


def ce_step(params: dict[str, np.ndarray], cfg: ModelConfig,
            batch: list[tuple], *, dropout_rng: np.random.Generator | None = None
            ) -> tuple[dict[str, np.ndarray], StepStats]:
    """Maximum-likelihood update: ascends mean sequence log-likelihood."""
    if not batch:
        raise ValueError("empty batch")
    sources = [list(src.tokens) for src, _ in batch]
    targets = [list(tgt.tokens) for _, tgt in batch]
    terminated = [True] * len(batch)
    grads, logp = weighted_nll_grad(params, cfg, sources, targets, terminated,
                                    np.ones(len(batch)), dropout_rng)
    token_counts = np.array([len(t) + 1 for t in targets], dtype=np.float64)
    stats = StepStats(
        batch_size=len(batch),
        mean_logp=float(logp.mean()),
        extra={"logp_per_token": float((logp / token_counts).mean())},
    )
    return grads, stats
