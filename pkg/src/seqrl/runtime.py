"""Actor-learner runtime: trajectory queue, checkpoint bus, drivers, evaluator.

Two execution modes share every interface: a serial deterministic driver
(workers, learner, and evaluator interleaved round-robin on one thread,
bit-reproducible given a seed) and a threaded driver with real concurrent
worker/evaluator threads.  On-policy algorithms (reinforce, mrt) and
cross-entropy pretraining bypass the queue entirely.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as policy_model
from .checkpoint import PolicyCheckpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, write_config_snapshot
from .metrics import (
    DEFAULT_METRIC_CONFIG,
    MetricConfig,
    RewardSpec,
    composite_reward,
    corpus_bleu,
)
from .model import ModelConfig, init_params
from .objectives import (
    PpoConfig,
    StepStats,
    ce_step,
    mad_step,
    mrt_step,
    ppo_step,
    reinforce_step,
)
from .optim import AdamAscent, OptimizerConfig, global_norm
from .sampling import TemperatureGrid, build_trajectories, generate_candidates
from .shaping import BaselineState
from .tasks import (
    ParallelCorpus,
    SyntheticTaskSpec,
    Vocabulary,
    build_vocab,
    generate_synthetic,
    load_corpus,
    sample_training_pair,
)

CSV_COLUMNS = (
    "step", "wall_s", "dev_bleu", "greedy_beam_gap", "mean_reward", "mean_rbar",
    "mean_u", "mean_v", "mean_w", "clip_frac", "unique_samples", "queue_size",
    "ckpt_version",
)

QUEUE_ALGOS = ("mad", "ppo")


class TrajectoryQueue:
    """Bounded buffer between workers and the learner.

    FIFO eviction on overflow, uniform sampling without replacement, each
    item delivered at most once.  put() never blocks; sample_batch() blocks
    until min_size items are present or the queue is closed.
    """

    def __init__(self, capacity: int = 4096, min_size: int = 512,
                 max_times_sampled: int = 1, seed: int = 0,
                 record_events: bool = False):
        if capacity < 1 or not 1 <= min_size <= capacity:
            raise ValueError("need 1 <= min_size <= capacity")
        if max_times_sampled != 1:
            raise ValueError("only max_times_sampled=1 is supported")
        self.capacity = capacity
        self.min_size = min_size
        self._items: list = []
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._rng = np.random.default_rng(seed)
        self._closed = False
        self._produced = 0
        self._consumed = 0
        self._evicted = 0
        self._events: list | None = [] if record_events else None

    def put(self, item) -> bool:
        """Insert, evicting the oldest item when full. False once closed."""
        with self._lock:
            if self._closed:
                return False
            if len(self._items) == self.capacity:
                evicted = self._items.pop(0)
                self._evicted += 1
                if self._events is not None:
                    self._events.append(("evict", evicted))
            self._items.append(item)
            self._produced += 1
            if self._events is not None:
                self._events.append(("put", item))
            if len(self._items) >= self.min_size:
                self._ready.notify()
            return True

    def sample_batch(self, batch_size: int, timeout: float | None = None
                     ) -> tuple[list, str]:
        """Uniform draw without replacement; drawn items are removed.

        Returns (items, status) with status "ok", "timeout", or "closed";
        on close whatever remains (possibly nothing) is handed over.
        """
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._ready:
            while len(self._items) < self.min_size and not self._closed:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return [], "timeout"
                self._ready.wait(remaining)
            take = min(batch_size, len(self._items))
            chosen = sorted(self._rng.choice(len(self._items), size=take,
                                             replace=False).tolist()) if take else []
            batch = [self._items[i] for i in chosen]
            for i in reversed(chosen):
                del self._items[i]
            self._consumed += len(batch)
            if self._events is not None and batch:
                self._events.append(("sample", tuple(batch)))
            return batch, ("closed" if self._closed else "ok")

    def size(self) -> int:
        with self._lock:
            return len(self._items)

    def close(self) -> None:
        with self._ready:
            self._closed = True
            self._ready.notify_all()

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed

    @property
    def produced(self) -> int:
        with self._lock:
            return self._produced

    @property
    def consumed(self) -> int:
        with self._lock:
            return self._consumed

    @property
    def evicted(self) -> int:
        with self._lock:
            return self._evicted

    @property
    def events(self) -> list:
        with self._lock:
            if self._events is None:
                raise RuntimeError("queue was built with record_events=False")
            return list(self._events)


class CheckpointBus:
    """Single-writer publish point for policy snapshots.

    publish() deep-copies the parameters and freezes them, so a reader can
    never observe a half-written block or a later in-place optimizer update;
    versions must be strictly increasing.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._fresh = threading.Condition(self._lock)
        self._latest: PolicyCheckpoint | None = None

    def publish(self, ckpt: PolicyCheckpoint) -> None:
        params = {}
        for name, arr in ckpt.params.items():
            copy = np.array(arr, dtype=np.float64, copy=True)
            copy.setflags(write=False)
            params[name] = copy
        frozen = PolicyCheckpoint(params=params, config=ckpt.config,
                                  step=ckpt.step, version=ckpt.version)
        with self._fresh:
            if self._latest is not None and frozen.version <= self._latest.version:
                raise ValueError(
                    f"version must increase: {frozen.version} after {self._latest.version}")
            self._latest = frozen
            self._fresh.notify_all()

    def latest(self) -> PolicyCheckpoint | None:
        with self._lock:
            return self._latest

    def wait_for_newer(self, version: int, timeout: float | None = None
                       ) -> PolicyCheckpoint | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._fresh:
            while self._latest is None or self._latest.version <= version:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return None
                self._fresh.wait(remaining)
            return self._latest


def filter_stale(batch: list, current_version: int, max_versions: int
                 ) -> tuple[list, int]:
    """Drop items generated more than max_versions checkpoints ago."""
    kept = [t for t in batch if current_version - t.version <= max_versions]
    return kept, len(batch) - len(kept)


class MetricsLog:
    """Append-only CSV with a fixed column schema."""

    def __init__(self, path):
        self.path = Path(path)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._f = open(self.path, "a", encoding="utf-8", buffering=1)
        self._lock = threading.Lock()
        if fresh:
            self._f.write(",".join(CSV_COLUMNS) + "\n")

    def append(self, row: dict) -> None:
        cells = []
        for col in CSV_COLUMNS:
            value = row[col]
            if col in ("step", "queue_size", "ckpt_version"):
                cells.append(str(int(value)))
            elif col == "wall_s":
                cells.append(f"{float(value):.3f}")
            else:
                cells.append(f"{float(value):.6f}")
        with self._lock:
            self._f.write(",".join(cells) + "\n")

    def close(self) -> None:
        with self._lock:
            self._f.close()


_WINDOW_KEYS = ("mean_reward", "mean_rbar", "mean_u", "mean_v", "mean_w", "clip_frac")


class _StatWindow:
    """Learner/worker diagnostics accumulated between metric rows."""

    def __init__(self):
        self._lock = threading.Lock()
        self._reset()

    def _reset(self):
        self._steps = 0
        self._sums = dict.fromkeys(_WINDOW_KEYS, 0.0)
        self._unique_sum = 0
        self._set_count = 0

    def add_step(self, stats: StepStats) -> None:
        with self._lock:
            self._steps += 1
            for key in _WINDOW_KEYS:
                self._sums[key] += float(getattr(stats, key))

    def add_sets(self, unique_counts) -> None:
        with self._lock:
            for count in unique_counts:
                self._unique_sum += int(count)
                self._set_count += 1

    def drain(self) -> dict:
        with self._lock:
            out = {key: (self._sums[key] / self._steps if self._steps else 0.0)
                   for key in _WINDOW_KEYS}
            out["unique_samples"] = (self._unique_sum / self._set_count
                                     if self._set_count else 0.0)
            self._reset()
            return out


@dataclass(frozen=True)
class EvalReport:
    dev_bleu: float
    gap: float | None  # beam minus greedy corpus BLEU on the diagnostic subset


def evaluate_params(params: dict[str, np.ndarray], model_cfg: ModelConfig,
                    vocab: Vocabulary, dev_pairs: list,
                    *, gap_subset: int = 0, beams: int = 5,
                    alpha: float = 1.0) -> EvalReport:
    """Greedy dev corpus BLEU, plus the beam-vs-greedy gap on a subset."""
    if not dev_pairs:
        raise ValueError("empty evaluation set")
    sources = [list(src.tokens) for src, _ in dev_pairs]
    refs = [ref for _, ref in dev_pairs]
    greedy = policy_model.greedy_decode(params, model_cfg, sources)
    hyps = [vocab.seq(tuple(toks)) for toks in greedy]
    dev_bleu = corpus_bleu(hyps, refs)
    gap = None
    if gap_subset > 0:
        take = min(gap_subset, len(dev_pairs))
        beam_hyps = []
        for src, _ in dev_pairs[:take]:
            hyp = policy_model.beam_decode(params, model_cfg, list(src.tokens),
                                           beam_size=beams, alpha=alpha)
            beam_hyps.append(vocab.seq(tuple(hyp.tokens)))
        beam_bleu = corpus_bleu(beam_hyps, refs[:take])
        greedy_bleu = corpus_bleu(hyps[:take], refs[:take])
        gap = beam_bleu - greedy_bleu
    return EvalReport(dev_bleu=dev_bleu, gap=gap)


# ---------------------------------------------------------------------------
# workers


@dataclass
class _WorkerContext:
    corpus: ParallelCorpus
    grid: TemperatureGrid
    reward: RewardSpec
    rng: np.random.Generator
    normalize: bool
    weights: bool
    metric_cfg: MetricConfig = DEFAULT_METRIC_CONFIG


def _make_worker_contexts(cfg: RunConfig, corpus: ParallelCorpus,
                          seeds) -> list[_WorkerContext]:
    if cfg.algo == "mad":
        grid = TemperatureGrid(cfg.t_min, cfg.t_max, cfg.n_samples)
        normalize = cfg.reward_norm == "conditional"
        weights = cfg.mad_weights == "on"
    else:  # ppo: fixed temperature, raw rewards z-scored at the learner
        grid = TemperatureGrid(cfg.temperature, cfg.temperature, cfg.n_samples)
        normalize = False
        weights = False
    reward = RewardSpec.parse(cfg.reward)
    return [
        _WorkerContext(corpus=corpus, grid=grid, reward=reward,
                       rng=np.random.default_rng(seed),
                       normalize=normalize, weights=weights)
        for seed in seeds
    ]


def _worker_once(ctx: _WorkerContext, ckpt: PolicyCheckpoint,
                 queue: TrajectoryQueue) -> tuple[int, int]:
    """One generator iteration: draw a source, sample, score, enqueue.

    Returns (trajectories enqueued, unique candidates)."""
    src, ref = sample_training_pair(ctx.corpus, ctx.rng)
    cs = generate_candidates(ckpt.params, ckpt.config, ctx.corpus.vocab,
                             src, ref, ctx.grid, ctx.reward, ctx.rng,
                             metric_cfg=ctx.metric_cfg)
    trajectories = build_trajectories(cs, version=ckpt.version,
                                      normalize=ctx.normalize, weights=ctx.weights)
    enqueued = 0
    for t in trajectories:
        if queue.put(t):
            enqueued += 1
    return enqueued, len(cs)


def worker_loop(worker_id: int, bus: CheckpointBus, queue: TrajectoryQueue,
                ctx: _WorkerContext, stop_event: threading.Event,
                window: _StatWindow | None = None) -> None:
    """Generate until stopped; transient failures back off, never crash."""
    failures = 0
    while not stop_event.is_set() and not queue.closed:
        ckpt = bus.latest()
        if ckpt is None:
            time.sleep(0.01)
            continue
        try:
            _, unique = _worker_once(ctx, ckpt, queue)
            failures = 0
            if window is not None:
                window.add_sets([unique])
        except Exception:
            failures += 1
            time.sleep(min(0.05 * failures, 1.0))


# ---------------------------------------------------------------------------
# run plumbing


@dataclass
class RunResult:
    out_dir: Path
    algo: str
    steps_run: int
    stopped_early: bool
    best_dev_bleu: float
    best_step: int
    final_dev_bleu: float
    metrics_path: Path
    final_path: Path
    best_path: Path
    counters: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def corpus_from_config(cfg: RunConfig) -> ParallelCorpus:
    if cfg.uses_files():
        needed = (cfg.train_src, cfg.train_tgt, cfg.dev_src, cfg.dev_tgt)
        if not all(needed):
            raise ConfigError("file-based runs need train and dev source/target paths")
        if cfg.vocab_file:
            vocab = Vocabulary.load(cfg.vocab_file)
        else:
            vocab = build_vocab([cfg.train_src, cfg.train_tgt], cfg.vocab_size)
        prefixes = {"train": (cfg.train_src, cfg.train_tgt),
                    "dev": (cfg.dev_src, cfg.dev_tgt)}
        if cfg.test_src and cfg.test_tgt:
            prefixes["test"] = (cfg.test_src, cfg.test_tgt)
        return load_corpus(prefixes, vocab)
    spec = SyntheticTaskSpec(kind=cfg.task, vocab_size=cfg.vocab_size,
                             length_range=(cfg.min_len, cfg.max_len),
                             sizes=(cfg.train_size, cfg.dev_size, cfg.test_size),
                             seed=cfg.task_seed, cipher_seed=cfg.cipher_seed)
    return generate_synthetic(spec)


def _initial_params(cfg: RunConfig, corpus: ParallelCorpus,
                    init_seed) -> tuple[dict[str, np.ndarray], ModelConfig]:
    if cfg.ce_checkpoint:
        ckpt = load_checkpoint(cfg.ce_checkpoint)
        if ckpt.config.vocab_size != len(corpus.vocab):
            raise ConfigError(
                f"checkpoint vocab size {ckpt.config.vocab_size} != corpus vocab "
                f"size {len(corpus.vocab)}")
        params = {name: arr.copy() for name, arr in ckpt.params.items()}
        return params, ckpt.config
    model_cfg = ModelConfig(vocab_size=len(corpus.vocab),
                            hidden_size=cfg.hidden_size,
                            layer_count=cfg.layer_count,
                            dropout=cfg.dropout,
                            tied_softmax=cfg.tied_softmax)
    params = init_params(model_cfg, np.random.default_rng(init_seed))
    return params, model_cfg


class _EvalTracker:
    """Best-checkpoint selection, metric rows, and early stopping."""

    def __init__(self, cfg: RunConfig, corpus: ParallelCorpus,
                 model_cfg: ModelConfig, log: MetricsLog, out_dir: Path,
                 window: _StatWindow, start_time: float):
        self.cfg = cfg
        self.corpus = corpus
        self.model_cfg = model_cfg
        self.log = log
        self.out_dir = Path(out_dir)
        self.window = window
        self.start_time = start_time
        self.dev_pairs = corpus.split("dev")
        self.best_dev_bleu = -math.inf
        self.best_step = 0
        self.final_dev_bleu = math.nan
        self.last_gap = 0.0
        self.last_gap_step: int | None = None
        self.last_tick_step = -1
        self.last_version = -1
        self.history: list[dict] = []

    def _want_gap(self, step: int, final: bool) -> bool:
        if self.cfg.gap_subset <= 0:
            return False
        if final or self.last_gap_step is None:
            return True
        return step - self.last_gap_step >= self.cfg.gap_period

    def tick(self, step: int, params: dict[str, np.ndarray], version: int,
             queue_size: int, final: bool = False) -> bool:
        """Evaluate, log a row, update best tracking. True means stop now."""
        gap_subset = self.cfg.gap_subset if self._want_gap(step, final) else 0
        report = evaluate_params(params, self.model_cfg, self.corpus.vocab,
                                 self.dev_pairs, gap_subset=gap_subset,
                                 beams=self.cfg.beams, alpha=self.cfg.beam_alpha)
        if report.gap is not None:
            self.last_gap = report.gap
            self.last_gap_step = step
        row = {"step": step, "wall_s": time.monotonic() - self.start_time,
               "dev_bleu": report.dev_bleu, "greedy_beam_gap": self.last_gap,
               "queue_size": queue_size, "ckpt_version": version}
        row.update(self.window.drain())
        self.log.append(row)
        self.history.append(row)
        self.final_dev_bleu = report.dev_bleu
        self.last_tick_step = step
        self.last_version = version
        if report.dev_bleu > self.best_dev_bleu:
            self.best_dev_bleu = report.dev_bleu
            self.best_step = step
            ckpt = PolicyCheckpoint(params=params, config=self.model_cfg,
                                    step=step, version=version)
            save_checkpoint(ckpt, self.out_dir / "best.ckpt")
        return step - self.best_step >= self.cfg.patience


def _finish_run(cfg: RunConfig, tracker: _EvalTracker, out_dir: Path,
                params: dict, model_cfg: ModelConfig, step: int, version: int,
                stopped_early: bool, counters: dict, log: MetricsLog) -> RunResult:
    final_path = out_dir / "final.ckpt"
    best_path = out_dir / "best.ckpt"
    save_checkpoint(PolicyCheckpoint(params=params, config=model_cfg,
                                     step=step, version=version), final_path)
    if not best_path.exists():
        save_checkpoint(PolicyCheckpoint(params=params, config=model_cfg,
                                         step=step, version=version), best_path)
    log.close()
    skipped = counters.get("nonfinite_steps", 0)
    if step > 0 and skipped > 0.01 * step:
        raise RuntimeError(
            f"{skipped} of {step} updates had non-finite gradients (>1%)")
    return RunResult(out_dir=out_dir, algo=cfg.algo, steps_run=step,
                     stopped_early=stopped_early,
                     best_dev_bleu=tracker.best_dev_bleu,
                     best_step=tracker.best_step,
                     final_dev_bleu=tracker.final_dev_bleu,
                     metrics_path=log.path, final_path=final_path,
                     best_path=best_path, counters=counters,
                     history=tracker.history)


# ---------------------------------------------------------------------------
# drivers


def _learner_grads(cfg: RunConfig, params, model_cfg, kept, dropout_rng):
    if cfg.algo == "mad":
        return mad_step(params, model_cfg, kept, reward_norm=cfg.reward_norm,
                        dropout_rng=dropout_rng)
    return ppo_step(params, model_cfg, kept, PpoConfig(cfg.ppo_epsilon),
                    dropout_rng=dropout_rng)


def _run_queue_serial(cfg: RunConfig, corpus: ParallelCorpus, params, model_cfg,
                      out_dir: Path, seeds) -> RunResult:
    queue = TrajectoryQueue(cfg.queue_capacity, cfg.queue_min_size,
                            cfg.queue_max_times_sampled, seed=seeds["queue"])
    bus = CheckpointBus()
    bus.publish(PolicyCheckpoint(params=params, config=model_cfg, step=0, version=0))
    contexts = _make_worker_contexts(cfg, corpus, seeds["workers"])
    dropout_rng = (np.random.default_rng(seeds["dropout"])
                   if model_cfg.dropout > 0 else None)
    opt = AdamAscent(OptimizerConfig(lr=cfg.lr, warmup_steps=cfg.warmup_steps,
                                     clip_norm=cfg.clip_norm))
    window = _StatWindow()
    log = MetricsLog(out_dir / "metrics.csv")
    tracker = _EvalTracker(cfg, corpus, model_cfg, log, out_dir, window,
                           time.monotonic())
    counters = {"stale_dropped": 0, "nonfinite_steps": 0, "empty_batches": 0}
    next_worker = 0
    starved = 0

    def fill(target: int) -> None:
        nonlocal next_worker, starved
        while queue.size() < target:
            ctx = contexts[next_worker % len(contexts)]
            next_worker += 1
            enqueued, unique = _worker_once(ctx, bus.latest(), queue)
            window.add_sets([unique])
            starved = 0 if enqueued else starved + 1
            if starved >= 2000:
                raise RuntimeError(
                    "queue starvation: 2000 consecutive sources yielded no trajectories")

    version = 0
    step = 0
    stopped_early = False
    tracker.tick(0, params, version, queue.size())
    while step < cfg.steps:
        step += 1
        fill(max(cfg.queue_min_size, cfg.batch_size))
        batch, _ = queue.sample_batch(cfg.batch_size)
        kept, dropped = filter_stale(batch, version, cfg.staleness_max_versions)
        counters["stale_dropped"] += dropped
        if not kept:
            counters["empty_batches"] += 1
            continue
        grads, stats = _learner_grads(cfg, params, model_cfg, kept, dropout_rng)
        if not np.isfinite(global_norm(grads)):
            counters["nonfinite_steps"] += 1
            continue
        opt.step(params, grads)
        window.add_step(stats)
        if step % cfg.publish_period == 0:
            version = step // cfg.publish_period
            bus.publish(PolicyCheckpoint(params=params, config=model_cfg,
                                         step=step, version=version))
        if step % cfg.eval_period == 0 or step == cfg.steps:
            if tracker.tick(step, params, version, queue.size(),
                            final=step == cfg.steps):
                stopped_early = True
                break
    if tracker.last_tick_step != step:
        tracker.tick(step, params, version, queue.size(), final=True)
    queue.close()
    counters.update(produced=queue.produced, consumed=queue.consumed,
                    evicted=queue.evicted)
    return _finish_run(cfg, tracker, out_dir, params, model_cfg, step, version,
                       stopped_early, counters, log)


def _run_queue_threaded(cfg: RunConfig, corpus: ParallelCorpus, params, model_cfg,
                        out_dir: Path, seeds) -> RunResult:
    queue = TrajectoryQueue(cfg.queue_capacity, cfg.queue_min_size,
                            cfg.queue_max_times_sampled, seed=seeds["queue"])
    bus = CheckpointBus()
    bus.publish(PolicyCheckpoint(params=params, config=model_cfg, step=0, version=0))
    contexts = _make_worker_contexts(cfg, corpus, seeds["workers"])
    dropout_rng = (np.random.default_rng(seeds["dropout"])
                   if model_cfg.dropout > 0 else None)
    opt = AdamAscent(OptimizerConfig(lr=cfg.lr, warmup_steps=cfg.warmup_steps,
                                     clip_norm=cfg.clip_norm))
    window = _StatWindow()
    log = MetricsLog(out_dir / "metrics.csv")
    tracker = _EvalTracker(cfg, corpus, model_cfg, log, out_dir, window,
                           time.monotonic())
    counters = {"stale_dropped": 0, "nonfinite_steps": 0, "empty_batches": 0}
    stop_event = threading.Event()

    workers = [threading.Thread(target=worker_loop,
                                args=(i, bus, queue, ctx, stop_event, window),
                                daemon=True)
               for i, ctx in enumerate(contexts)]

    def evaluator_loop():
        last = -1
        while True:
            ckpt = bus.wait_for_newer(last, timeout=0.25)
            if ckpt is None:
                if stop_event.is_set():
                    return
                continue
            last = ckpt.version
            if tracker.tick(ckpt.step, ckpt.params, ckpt.version, queue.size()):
                stop_event.set()

    evaluator = threading.Thread(target=evaluator_loop, daemon=True)
    for t in workers:
        t.start()
    evaluator.start()

    step = 0
    version = 0
    while step < cfg.steps and not stop_event.is_set():
        batch, status = queue.sample_batch(cfg.batch_size, timeout=0.5)
        if status == "closed":
            break
        if status == "timeout":
            continue
        kept, dropped = filter_stale(batch, version, cfg.staleness_max_versions)
        counters["stale_dropped"] += dropped
        if not kept:
            counters["empty_batches"] += 1
            continue
        step += 1
        grads, stats = _learner_grads(cfg, params, model_cfg, kept, dropout_rng)
        if not np.isfinite(global_norm(grads)):
            counters["nonfinite_steps"] += 1
            continue
        opt.step(params, grads)
        window.add_step(stats)
        if step % cfg.publish_period == 0:
            version = step // cfg.publish_period
            bus.publish(PolicyCheckpoint(params=params, config=model_cfg,
                                         step=step, version=version))

    stopped_early = stop_event.is_set() and step < cfg.steps
    if step % cfg.publish_period != 0:
        version += 1
        bus.publish(PolicyCheckpoint(params=params, config=model_cfg,
                                     step=step, version=version))
    deadline = time.monotonic() + 60.0
    while tracker.last_version < version and time.monotonic() < deadline:
        if stop_event.is_set():
            break
        time.sleep(0.05)
    stop_event.set()
    queue.close()
    for t in workers:
        t.join(timeout=10.0)
    evaluator.join(timeout=10.0)
    counters.update(produced=queue.produced, consumed=queue.consumed,
                    evicted=queue.evicted)
    return _finish_run(cfg, tracker, out_dir, params, model_cfg, step, version,
                       stopped_early, counters, log)


def _run_onpolicy(cfg: RunConfig, corpus: ParallelCorpus, params, model_cfg,
                  out_dir: Path, seeds) -> RunResult:
    reward = RewardSpec.parse(cfg.reward)
    source_rng = np.random.default_rng(seeds["source"])
    sample_rng = np.random.default_rng(seeds["sample"])
    dropout_rng = (np.random.default_rng(seeds["dropout"])
                   if model_cfg.dropout > 0 else None)
    opt = AdamAscent(OptimizerConfig(lr=cfg.lr, warmup_steps=cfg.warmup_steps,
                                     clip_norm=cfg.clip_norm))
    window = _StatWindow()
    log = MetricsLog(out_dir / "metrics.csv")
    tracker = _EvalTracker(cfg, corpus, model_cfg, log, out_dir, window,
                           time.monotonic())
    counters = {"nonfinite_steps": 0, "skipped_degenerate": 0}
    baseline = BaselineState(decay=cfg.baseline_decay)
    if cfg.algo == "mrt":
        grid = TemperatureGrid(cfg.temperature, cfg.temperature, cfg.mrt_samples)
        sets_per_step = max(1, cfg.batch_size // cfg.mrt_samples)
    temperature = np.array([cfg.temperature])

    step = 0
    stopped_early = False
    tracker.tick(0, params, 0, 0)
    while step < cfg.steps:
        step += 1
        if cfg.algo == "reinforce":
            batch = []
            for _ in range(cfg.batch_size):
                src, ref = sample_training_pair(corpus, source_rng)
                tokens, terminated, _ = policy_model.sample_batch(
                    params, model_cfg, list(src.tokens), temperature, sample_rng)
                hyp = corpus.vocab.seq(tuple(tokens[0]), terminated=terminated[0])
                batch.append((src, hyp, composite_reward(hyp, ref, reward)))
            window.add_sets([1] * len(batch))
            grads, baseline, stats = reinforce_step(params, model_cfg, batch,
                                                    baseline, dropout_rng=dropout_rng)
        else:  # mrt
            sets = []
            for _ in range(sets_per_step):
                src, ref = sample_training_pair(corpus, source_rng)
                sets.append(generate_candidates(params, model_cfg, corpus.vocab,
                                                src, ref, grid, reward, sample_rng))
            window.add_sets([len(cs) for cs in sets])
            try:
                grads, stats = mrt_step(params, model_cfg, sets,
                                        dropout_rng=dropout_rng)
            except ValueError:
                counters["skipped_degenerate"] += 1
                continue
        if not np.isfinite(global_norm(grads)):
            counters["nonfinite_steps"] += 1
            continue
        opt.step(params, grads)
        window.add_step(stats)
        version = step // cfg.publish_period
        if step % cfg.eval_period == 0 or step == cfg.steps:
            if tracker.tick(step, params, version, 0, final=step == cfg.steps):
                stopped_early = True
                break
    version = step // cfg.publish_period
    if tracker.last_tick_step != step:
        tracker.tick(step, params, version, 0, final=True)
    return _finish_run(cfg, tracker, out_dir, params, model_cfg, step, version,
                       stopped_early, counters, log)


def _run_ce(cfg: RunConfig, corpus: ParallelCorpus, params, model_cfg,
            out_dir: Path, seeds) -> RunResult:
    source_rng = np.random.default_rng(seeds["source"])
    dropout_rng = (np.random.default_rng(seeds["dropout"])
                   if model_cfg.dropout > 0 else None)
    opt = AdamAscent(OptimizerConfig(lr=cfg.lr, warmup_steps=cfg.warmup_steps,
                                     clip_norm=cfg.clip_norm))
    window = _StatWindow()
    log = MetricsLog(out_dir / "metrics.csv")
    tracker = _EvalTracker(cfg, corpus, model_cfg, log, out_dir, window,
                           time.monotonic())
    counters = {"nonfinite_steps": 0}

    step = 0
    stopped_early = False
    tracker.tick(0, params, 0, 0)
    while step < cfg.steps:
        step += 1
        batch = [sample_training_pair(corpus, source_rng)
                 for _ in range(cfg.batch_size)]
        grads, stats = ce_step(params, model_cfg, batch, dropout_rng=dropout_rng)
        if not np.isfinite(global_norm(grads)):
            counters["nonfinite_steps"] += 1
            continue
        opt.step(params, grads)
        window.add_step(stats)
        version = step // cfg.publish_period
        if step % cfg.eval_period == 0 or step == cfg.steps:
            if tracker.tick(step, params, version, 0, final=step == cfg.steps):
                stopped_early = True
                break
    version = step // cfg.publish_period
    if tracker.last_tick_step != step:
        tracker.tick(step, params, version, 0, final=True)
    return _finish_run(cfg, tracker, out_dir, params, model_cfg, step, version,
                       stopped_early, counters, log)


def _spawn_seeds(cfg: RunConfig) -> dict:
    children = np.random.SeedSequence(cfg.seed).spawn(5 + cfg.workers)
    return {"init": children[0], "queue": children[1], "dropout": children[2],
            "source": children[3], "sample": children[4],
            "workers": children[5:5 + cfg.workers]}


def run_training(cfg: RunConfig, corpus: ParallelCorpus | None = None,
                 out_dir=None) -> RunResult:
    """Train per the configuration and return the run summary.

    Writes config.txt, metrics.csv, best.ckpt, and final.ckpt into out_dir.
    """
    cfg.validate()
    if corpus is None:
        corpus = corpus_from_config(cfg)
    if not corpus.split("dev"):
        raise ConfigError("training requires a non-empty dev split")
    out_dir = Path(out_dir) if out_dir is not None else Path(cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(cfg, out_dir)
    seeds = _spawn_seeds(cfg)
    params, model_cfg = _initial_params(cfg, corpus, seeds["init"])
    if cfg.algo == "ce":
        return _run_ce(cfg, corpus, params, model_cfg, out_dir, seeds)
    if cfg.algo in ("reinforce", "mrt"):
        return _run_onpolicy(cfg, corpus, params, model_cfg, out_dir, seeds)
    if cfg.driver == "threaded":
        return _run_queue_threaded(cfg, corpus, params, model_cfg, out_dir, seeds)
    return _run_queue_serial(cfg, corpus, params, model_cfg, out_dir, seeds)


def measure_worker_throughput(cfg: RunConfig, corpus: ParallelCorpus,
                              params: dict[str, np.ndarray],
                              model_cfg: ModelConfig, worker_count: int,
                              duration_s: float = 6.0, warmup_s: float = 1.0
                              ) -> float:
    """Trajectories enqueued per second with the learner halted."""
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    seeds = np.random.SeedSequence(cfg.seed).spawn(worker_count + 1)
    queue = TrajectoryQueue(cfg.queue_capacity, min_size=1, seed=seeds[0])
    bus = CheckpointBus()
    bus.publish(PolicyCheckpoint(params=params, config=model_cfg, step=0, version=0))
    base = _make_worker_contexts(cfg, corpus, seeds[1:worker_count + 1])
    stop_event = threading.Event()
    threads = [threading.Thread(target=worker_loop,
                                args=(i, bus, queue, ctx, stop_event, None),
                                daemon=True)
               for i, ctx in enumerate(base)]
    for t in threads:
        t.start()
    time.sleep(warmup_s)
    produced_0 = queue.produced
    t0 = time.monotonic()
    time.sleep(duration_s)
    produced_1 = queue.produced
    t1 = time.monotonic()
    stop_event.set()
    queue.close()
    for t in threads:
        t.join(timeout=10.0)
    return (produced_1 - produced_0) / (t1 - t0)
