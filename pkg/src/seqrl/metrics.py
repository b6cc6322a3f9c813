"""Sentence- and corpus-level translation quality metrics.

All scores live on a 0..100 scale except sentence_ter, which returns the
raw (shifts + edits)/|ref| ratio; reward composition rescales and negates
TER so that higher is better everywhere.

Token metrics accept a TokenSeq or any sequence of hashable tokens; ChrF
works on surface strings (a TokenSeq contributes its .surface).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricConfig:
    bleu_max_order: int = 4
    chrf_order: int = 6
    chrf_beta: float = 2.0
    ter_max_shifts: int = 10
    ter_max_block: int = 10
    ter_exact_len: int = 8  # exact shift search up to this length, greedy above
    ter_state_cap: int = 50000  # exact-search state budget before greedy fallback

    def __post_init__(self):
        if self.bleu_max_order < 1 or self.chrf_order < 1:
            raise ValueError("n-gram orders must be positive")
        if self.chrf_beta <= 0:
            raise ValueError("chrf_beta must be positive")
        if self.ter_max_shifts < 0 or self.ter_max_block < 1:
            raise ValueError("invalid TER search bounds")
        if self.ter_exact_len < 0 or self.ter_state_cap < 1:
            raise ValueError("invalid TER search bounds")


DEFAULT_METRIC_CONFIG = MetricConfig()


def _tokens_of(x) -> tuple:
    if hasattr(x, "tokens"):
        return tuple(x.tokens)
    if isinstance(x, str):
        raise TypeError("token metric got a string; pass a token sequence")
    return tuple(x)


def _surface_of(x) -> str:
    if hasattr(x, "surface"):
        return x.surface
    if isinstance(x, str):
        return x
    raise TypeError("chrf needs a surface string or TokenSeq")


def _ngram_counts(tokens: tuple, order: int) -> Counter:
    return Counter(tokens[i : i + order] for i in range(len(tokens) - order + 1))


def sentence_bleu(hyp, ref, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """Smoothed sentence BLEU on a 0..100 scale.

    Modified n-gram precisions over orders 1..bleu_max_order, restricted to
    the orders the hypothesis actually has; the k-th order with zero matches
    is smoothed to 1/2^k of full credit; brevity penalty exp(1 - |ref|/|hyp|)
    applies when the hypothesis is shorter than the reference.
    """
    hyp_t, ref_t = _tokens_of(hyp), _tokens_of(ref)
    if not ref_t:
        raise ValueError("reference must be non-empty")
    if not hyp_t:
        return 0.0
    log_sum = 0.0
    effective = 0
    smooth = 1.0
    for n in range(1, cfg.bleu_max_order + 1):
        total = len(hyp_t) - n + 1
        if total < 1:
            break
        correct = sum((_ngram_counts(hyp_t, n) & _ngram_counts(ref_t, n)).values())
        if correct == 0:
            smooth *= 2.0
            precision = 1.0 / (smooth * total)
        else:
            precision = correct / total
        log_sum += math.log(precision)
        effective += 1
    score = math.exp(log_sum / effective)
    if len(hyp_t) < len(ref_t):
        score *= math.exp(1.0 - len(ref_t) / len(hyp_t))
    return 100.0 * score


def sentence_gleu(hyp, ref, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """min(precision, recall) over n-gram counts pooled across orders.

    Both sides pool orders 1..min(bleu_max_order, |hyp|), so a short
    hypothesis is not penalized by reference n-grams of orders it cannot
    contain.
    """
    hyp_t, ref_t = _tokens_of(hyp), _tokens_of(ref)
    if not ref_t:
        raise ValueError("reference must be non-empty")
    if not hyp_t:
        return 0.0
    top = min(cfg.bleu_max_order, len(hyp_t))
    match = hyp_total = ref_total = 0
    for n in range(1, top + 1):
        hyp_counts = _ngram_counts(hyp_t, n)
        ref_counts = _ngram_counts(ref_t, n)
        match += sum((hyp_counts & ref_counts).values())
        hyp_total += sum(hyp_counts.values())
        ref_total += sum(ref_counts.values())
    if match == 0 or ref_total == 0:
        return 0.0
    return 100.0 * min(match / hyp_total, match / ref_total)


def sentence_chrf(hyp, ref, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """Character n-gram F_beta with whitespace removed, orders 1..chrf_order.

    Precision and recall are averaged over the orders where both sides have
    at least one n-gram; F_beta weighs recall by beta^2.
    """
    hyp_s = "".join(_surface_of(hyp).split())
    ref_s = "".join(_surface_of(ref).split())
    if not ref_s:
        raise ValueError("reference must be non-empty")
    stats = _chrf_statistics(hyp_s, ref_s, cfg.chrf_order)
    return 100.0 * _chrf_score(stats, cfg.chrf_order, cfg.chrf_beta)


def _chrf_statistics(hyp_s: str, ref_s: str, order: int) -> list[int]:
    """Per-order [hyp_count, ref_count, common_count] triples, flattened."""
    stats = []
    for n in range(1, order + 1):
        hyp_counts = _ngram_counts(tuple(hyp_s), n)
        ref_counts = _ngram_counts(tuple(ref_s), n)
        stats += [
            sum(hyp_counts.values()),
            sum(ref_counts.values()),
            sum((hyp_counts & ref_counts).values()),
        ]
    return stats


def _chrf_score(stats: list[int], order: int, beta: float) -> float:
    avg_precision = avg_recall = 0.0
    effective = 0
    for n in range(order):
        hyp_count, ref_count, common = stats[3 * n : 3 * n + 3]
        if hyp_count > 0 and ref_count > 0:
            avg_precision += common / hyp_count
            avg_recall += common / ref_count
            effective += 1
    if effective == 0:
        return 0.0
    avg_precision /= effective
    avg_recall /= effective
    if avg_precision + avg_recall == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * avg_precision * avg_recall / (b2 * avg_precision + avg_recall)


def _edit_distance(a: tuple, b: tuple) -> int:
    """Word-level Levenshtein distance with unit costs."""
    if not a:
        return len(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _edit_distance_batch(cands: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Levenshtein distance of every row of cands (K, m) against ref (n,).

    Runs the DP along anti-diagonals: slot i of a diagonal buffer holds
    D[i, d-i], so each diagonal is one vectorized update over all K rows.
    """
    k, m = cands.shape
    n = int(ref.shape[0])
    if m == 0:
        return np.full(k, n, dtype=np.int64)
    if n == 0:
        return np.full(k, m, dtype=np.int64)
    diag2 = np.zeros((k, m + 1), dtype=np.int64)  # diagonal d-2
    diag1 = np.zeros((k, m + 1), dtype=np.int64)  # diagonal d-1
    diag1[:, 0] = 1  # D[0,1]
    diag1[:, 1] = 1  # D[1,0]
    result = None
    for d in range(2, m + n + 1):
        i0, i1 = max(0, d - n), min(m, d)
        cur = np.empty((k, m + 1), dtype=np.int64)
        if i0 == 0:
            cur[:, 0] = d  # D[0, d] = d
        if i1 == d:
            cur[:, d] = d  # D[d, 0] = d
        lo, hi = max(1, i0), min(i1, d - 1)
        if lo <= hi:
            ref_ids = ref[d - 1 - np.arange(lo, hi + 1)]
            sub = diag2[:, lo - 1 : hi] + (cands[:, lo - 1 : hi] != ref_ids)
            np.minimum(sub, diag1[:, lo - 1 : hi] + 1, out=sub)  # delete cand token
            np.minimum(sub, diag1[:, lo : hi + 1] + 1, out=sub)  # insert ref token
            cur[:, lo : hi + 1] = sub
        if d == m + n:
            result = cur[:, m].copy()
        diag2, diag1 = diag1, cur
    return result


def _ref_blocks(ref: tuple, max_block: int) -> set[tuple]:
    blocks = set()
    for n in range(1, min(max_block, len(ref)) + 1):
        for i in range(len(ref) - n + 1):
            blocks.add(ref[i : i + n])
    return blocks


def _successor_states(current: tuple, blocks: set[tuple], max_block: int) -> list[tuple]:
    """All sequences reachable from current by one legal block move.

    A legal move removes a contiguous block (length up to max_block) that
    also occurs contiguously in the reference and reinserts it at a
    different position.  Enumeration order is (i, length, j).
    """
    out = []
    n = len(current)
    for i in range(n):
        for length in range(1, min(max_block, n - i) + 1):
            block = current[i : i + length]
            if block not in blocks:
                continue
            rest = current[:i] + current[i + length :]
            for j in range(len(rest) + 1):
                if j == i:
                    continue
                out.append(rest[:j] + block + rest[j:])
    return out


def _greedy_ter_alignment(
    hyp_t: tuple, ref_t: tuple, ref_arr: np.ndarray, blocks: set[tuple], cfg: MetricConfig
) -> tuple[int, int]:
    """Each round applies the single move with the largest strict reduction
    in edit distance (first in enumeration order on ties), stopping after
    ter_max_shifts rounds or when no move improves."""
    current = hyp_t
    dist = _edit_distance(current, ref_t)
    shifts = 0
    while shifts < cfg.ter_max_shifts and dist > 0 and current:
        moves = _successor_states(current, blocks, cfg.ter_max_block)
        if not moves:
            break
        dists = _edit_distance_batch(np.asarray(moves, dtype=np.int64), ref_arr)
        best_idx = int(np.argmin(dists))
        best_dist = int(dists[best_idx])
        if best_dist >= dist:
            break
        dist, current = best_dist, moves[best_idx]
        shifts += 1
    return shifts, dist


def _exact_ter_alignment(
    hyp_t: tuple, ref_t: tuple, ref_arr: np.ndarray, blocks: set[tuple], cfg: MetricConfig
) -> tuple[int, int] | None:
    """Minimal shifts + edits by breadth-first search over block moves.

    Levels enumerate decompositions by shift count, so the first level that
    attains a given total cost uses the fewest shifts; a new level opens
    only while it could still beat the best known cost.  Returns None when
    the visited-state budget is exhausted.
    """
    edits0 = _edit_distance(hyp_t, ref_t)
    best = (edits0, 0, edits0)  # (cost, shifts, edits)
    frontier = [hyp_t]
    seen = {hyp_t}
    shifts = 0
    while frontier and shifts + 1 <= cfg.ter_max_shifts and shifts + 1 < best[0]:
        level = []
        for state in frontier:
            for nxt in _successor_states(state, blocks, cfg.ter_max_block):
                if nxt not in seen:
                    seen.add(nxt)
                    level.append(nxt)
        if len(seen) > cfg.ter_state_cap:
            return None
        if not level:
            break
        shifts += 1
        dists = _edit_distance_batch(np.asarray(level, dtype=np.int64), ref_arr)
        edits = int(dists.min())
        if shifts + edits < best[0]:
            best = (shifts + edits, shifts, edits)
        frontier = level
    return best[1], best[2]


def ter_alignment(hyp, ref, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> tuple[int, int]:
    """(shifts, edits) of the cheapest block-move decomposition found.

    A shift relocates a contiguous hypothesis block (length up to
    ter_max_block) that also occurs contiguously in the reference to a
    different position; edits is the word-level Levenshtein distance after
    all shifts.  Sequences up to ter_exact_len tokens are solved by
    exhaustive cost-bounded search (ties prefer fewer shifts); longer
    inputs fall back to a greedy best-move-per-round search.
    """
    hyp_raw, ref_raw = _tokens_of(hyp), _tokens_of(ref)
    if not ref_raw:
        raise ValueError("reference must be non-empty")
    ids: dict = {}
    hyp_t = tuple(ids.setdefault(t, len(ids)) for t in hyp_raw)
    ref_t = tuple(ids.setdefault(t, len(ids)) for t in ref_raw)
    blocks = _ref_blocks(ref_t, cfg.ter_max_block)
    ref_arr = np.asarray(ref_t, dtype=np.int64)
    if max(len(hyp_t), len(ref_t)) <= cfg.ter_exact_len:
        exact = _exact_ter_alignment(hyp_t, ref_t, ref_arr, blocks, cfg)
        if exact is not None:
            return exact
    return _greedy_ter_alignment(hyp_t, ref_t, ref_arr, blocks, cfg)


def sentence_ter(hyp, ref, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """(shifts + edits) / |ref|; 0 iff hyp equals ref. Lower is better."""
    shifts, edits = ter_alignment(hyp, ref, cfg)
    return (shifts + edits) / len(_tokens_of(ref))


def token_f1(hyp, ref) -> float:
    """F1 of multiset token overlap on a 0..100 scale."""
    hyp_t, ref_t = _tokens_of(hyp), _tokens_of(ref)
    if not ref_t:
        raise ValueError("reference must be non-empty")
    if not hyp_t:
        return 0.0
    overlap = sum((Counter(hyp_t) & Counter(ref_t)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(hyp_t)
    recall = overlap / len(ref_t)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


# --- reward composition -------------------------------------------------------


@dataclass(frozen=True)
class RewardSpec:
    """Weighted combination of sentence metrics; TER enters negated.

    TER's ratio is rescaled by 100 inside compositions so every component
    shares the 0..100 scale.
    """

    components: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("reward spec needs at least one component")
        for name, weight in self.components:
            if name not in _METRIC_FNS:
                raise ValueError(f"unknown metric {name!r}; expected one of {sorted(_METRIC_FNS)}")
            if not math.isfinite(weight):
                raise ValueError("reward weights must be finite")

    @classmethod
    def single(cls, name: str) -> "RewardSpec":
        return cls(components=((name, 1.0),))

    @classmethod
    def parse(cls, text: str) -> "RewardSpec":
        """'bleu' or 'all' or 'bleu:0.7,chrf:0.3'."""
        text = text.strip()
        if text == "all":
            return ALL_REWARD
        if ":" not in text:
            return cls.single(text)
        parts = []
        for chunk in text.split(","):
            name, _, weight = chunk.partition(":")
            parts.append((name.strip(), float(weight)))
        return cls(components=tuple(parts))


def _reward_ter(hyp, ref, cfg: MetricConfig) -> float:
    return -100.0 * sentence_ter(hyp, ref, cfg)


_METRIC_FNS = {
    "bleu": lambda hyp, ref, cfg: sentence_bleu(hyp, ref, cfg),
    "gleu": lambda hyp, ref, cfg: sentence_gleu(hyp, ref, cfg),
    "chrf": lambda hyp, ref, cfg: sentence_chrf(hyp, ref, cfg),
    "ter": _reward_ter,
    "token_f1": lambda hyp, ref, cfg: token_f1(hyp, ref),
}

ALL_REWARD = RewardSpec(components=tuple((name, 0.2) for name in
                                         ("bleu", "gleu", "chrf", "token_f1", "ter")))


def composite_reward(hyp, ref, spec: RewardSpec,
                     cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """Sum of weighted component scores; linear in the weights."""
    return sum(weight * _METRIC_FNS[name](hyp, ref, cfg) for name, weight in spec.components)


# --- corpus-level aggregates --------------------------------------------------


def corpus_bleu(hyps, refs, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """Corpus BLEU over aggregated counts, unsmoothed.

    Orders with zero hypothesis n-grams corpus-wide are skipped; an order
    with n-grams but zero matches sends the score to 0.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"corpus size mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    if not hyps:
        raise ValueError("empty corpus")
    max_order = cfg.bleu_max_order
    correct = [0] * max_order
    total = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_t, ref_t = _tokens_of(hyp), _tokens_of(ref)
        if not ref_t:
            raise ValueError("reference must be non-empty")
        hyp_len += len(hyp_t)
        ref_len += len(ref_t)
        for n in range(1, max_order + 1):
            t = len(hyp_t) - n + 1
            if t < 1:
                continue
            total[n - 1] += t
            correct[n - 1] += sum((_ngram_counts(hyp_t, n) & _ngram_counts(ref_t, n)).values())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    effective = 0
    for n in range(max_order):
        if total[n] == 0:
            continue
        if correct[n] == 0:
            return 0.0
        log_sum += math.log(correct[n] / total[n])
        effective += 1
    score = math.exp(log_sum / effective)
    if hyp_len < ref_len:
        score *= math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * score


def corpus_ter(hyps, refs, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """Total (shifts + edits) over total reference length."""
    if len(hyps) != len(refs):
        raise ValueError(f"corpus size mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    num = den = 0
    for hyp, ref in zip(hyps, refs):
        shifts, edits = ter_alignment(hyp, ref, cfg)
        num += shifts + edits
        den += len(_tokens_of(ref))
    return num / den


def corpus_chrf(hyps, refs, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """ChrF over corpus-aggregated per-order statistics."""
    if len(hyps) != len(refs):
        raise ValueError(f"corpus size mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    agg = [0] * (3 * cfg.chrf_order)
    for hyp, ref in zip(hyps, refs):
        hyp_s = "".join(_surface_of(hyp).split())
        ref_s = "".join(_surface_of(ref).split())
        if not ref_s:
            raise ValueError("reference must be non-empty")
        for i, v in enumerate(_chrf_statistics(hyp_s, ref_s, cfg.chrf_order)):
            agg[i] += v
    return 100.0 * _chrf_score(agg, cfg.chrf_order, cfg.chrf_beta)


def corpus_gleu(hyps, refs, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """min(P, R) over counts pooled across the corpus and orders."""
    if len(hyps) != len(refs):
        raise ValueError(f"corpus size mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    match = hyp_total = ref_total = 0
    for hyp, ref in zip(hyps, refs):
        hyp_t, ref_t = _tokens_of(hyp), _tokens_of(ref)
        if not ref_t:
            raise ValueError("reference must be non-empty")
        top = min(cfg.bleu_max_order, len(hyp_t))
        for n in range(1, top + 1):
            hyp_counts = _ngram_counts(hyp_t, n)
            ref_counts = _ngram_counts(ref_t, n)
            match += sum((hyp_counts & ref_counts).values())
            hyp_total += sum(hyp_counts.values())
            ref_total += sum(ref_counts.values())
    if match == 0 or hyp_total == 0 or ref_total == 0:
        return 0.0
    return 100.0 * min(match / hyp_total, match / ref_total)


def corpus_token_f1(hyps, refs) -> float:
    """F1 over multiset overlaps aggregated across the corpus."""
    if len(hyps) != len(refs):
        raise ValueError(f"corpus size mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    overlap = hyp_total = ref_total = 0
    for hyp, ref in zip(hyps, refs):
        hyp_t, ref_t = _tokens_of(hyp), _tokens_of(ref)
        if not ref_t:
            raise ValueError("reference must be non-empty")
        overlap += sum((Counter(hyp_t) & Counter(ref_t)).values())
        hyp_total += len(hyp_t)
        ref_total += len(ref_t)
    if overlap == 0 or hyp_total == 0:
        return 0.0
    precision = overlap / hyp_total
    recall = overlap / ref_total
    return 100.0 * 2.0 * precision * recall / (precision + recall)
