"""Queue/bus plumbing, metric logging, and end-to-end training drivers."""

import threading
import time
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from oracles import QueueModel
from seqrl.checkpoint import PolicyCheckpoint, load_checkpoint
from seqrl.config import ConfigError, RunConfig
from seqrl.model import ModelConfig, init_params
from seqrl.runtime import (
    CSV_COLUMNS,
    CheckpointBus,
    MetricsLog,
    TrajectoryQueue,
    evaluate_params,
    filter_stale,
    measure_worker_throughput,
    run_training,
)
from seqrl.tasks import SyntheticTaskSpec, generate_synthetic


class TestTrajectoryQueue:
    def test_constructor_validation(self):
        with pytest.raises(ValueError):
            TrajectoryQueue(capacity=0, min_size=1)
        with pytest.raises(ValueError):
            TrajectoryQueue(capacity=4, min_size=5)
        with pytest.raises(ValueError):
            TrajectoryQueue(capacity=4, min_size=1, max_times_sampled=2)

    def test_put_and_counters(self):
        q = TrajectoryQueue(capacity=8, min_size=1)
        for i in range(3):
            assert q.put(i) is True
        assert q.size() == 3 and q.produced == 3
        assert q.consumed == 0 and q.evicted == 0

    def test_fifo_eviction_on_overflow(self):
        q = TrajectoryQueue(capacity=3, min_size=1, record_events=True)
        items = [object() for _ in range(5)]
        for it in items:
            q.put(it)
        assert q.size() == 3 and q.evicted == 2
        evicted = [payload for kind, payload in q.events if kind == "evict"]
        assert evicted == items[:2]

    def test_sample_removes_without_duplicates(self):
        q = TrajectoryQueue(capacity=16, min_size=1, seed=5)
        items = [object() for _ in range(10)]
        for it in items:
            q.put(it)
        batch, status = q.sample_batch(4)
        assert status == "ok" and len(batch) == 4
        assert len({id(b) for b in batch}) == 4
        assert q.size() == 6 and q.consumed == 4
        rest, _ = q.sample_batch(6)
        assert {id(x) for x in batch} | {id(x) for x in rest} == {id(x) for x in items}

    def test_partial_batch_when_short(self):
        q = TrajectoryQueue(capacity=8, min_size=1)
        q.put("a")
        q.put("b")
        batch, status = q.sample_batch(5)
        assert status == "ok" and len(batch) == 2

    def test_blocks_until_min_size(self):
        q = TrajectoryQueue(capacity=8, min_size=3)
        out = {}

        def consume():
            out["batch"], out["status"] = q.sample_batch(3, timeout=5.0)

        t = threading.Thread(target=consume)
        t.start()
        for i in range(3):
            time.sleep(0.02)
            q.put(i)
        t.join(timeout=5.0)
        assert out["status"] == "ok" and sorted(out["batch"]) == [0, 1, 2]

    def test_timeout_status(self):
        q = TrajectoryQueue(capacity=8, min_size=1)
        batch, status = q.sample_batch(1, timeout=0.05)
        assert batch == [] and status == "timeout"

    def test_close_hands_over_remainder(self):
        q = TrajectoryQueue(capacity=8, min_size=4)
        q.put("x")
        q.close()
        batch, status = q.sample_batch(4)
        assert status == "closed" and batch == ["x"]
        assert q.put("y") is False
        again, status = q.sample_batch(1)
        assert again == [] and status == "closed"

    def test_event_log_replays_cleanly_single_thread(self):
        """Randomized put/sample interleaving against the reference model."""
        q = TrajectoryQueue(capacity=8, min_size=1, seed=3, record_events=True)
        rng = np.random.default_rng(4)
        for _ in range(2000):
            if rng.random() < 0.6 or q.size() == 0:
                q.put(object())
            else:
                q.sample_batch(int(rng.integers(1, 4)), timeout=1.0)
        assert QueueModel(8, 1).replay(q.events) == []

    def test_concurrent_producers_single_consumer(self):
        """Four producers race a consumer; the serialized event log must obey
        capacity, FIFO eviction, and deliver-at-most-once."""
        q = TrajectoryQueue(capacity=256, min_size=32, seed=7, record_events=True)
        per_producer = 2500
        consumed = []

        def produce(k):
            for i in range(per_producer):
                q.put((k, i))

        def consume():
            while True:
                batch, status = q.sample_batch(64, timeout=0.2)
                consumed.extend(batch)
                if status == "closed" and not batch:
                    return

        producers = [threading.Thread(target=produce, args=(k,)) for k in range(4)]
        consumer = threading.Thread(target=consume)
        consumer.start()
        for t in producers:
            t.start()
        for t in producers:
            t.join(timeout=30.0)
        q.close()
        consumer.join(timeout=30.0)
        assert not consumer.is_alive()
        assert QueueModel(256, 1).replay(q.events) == []
        assert q.produced == 4 * per_producer
        assert q.consumed == len(consumed)
        assert q.consumed + q.evicted == q.produced  # drained on close
        assert len(set(consumed)) == len(consumed)

    def test_events_require_recording(self):
        q = TrajectoryQueue(capacity=4, min_size=1)
        with pytest.raises(RuntimeError):
            q.events


def tiny_checkpoint(seed=0, step=0, version=0, hidden=6):
    cfg = ModelConfig(vocab_size=8, hidden_size=hidden, dropout=0.0)
    params = init_params(cfg, np.random.default_rng(seed))
    return PolicyCheckpoint(params=params, config=cfg, step=step, version=version)


class TestCheckpointBus:
    def test_starts_empty(self):
        assert CheckpointBus().latest() is None

    def test_publish_deep_copies_and_freezes(self):
        bus = CheckpointBus()
        ckpt = tiny_checkpoint()
        before = {k: a.copy() for k, a in ckpt.params.items()}
        bus.publish(ckpt)
        for arr in ckpt.params.values():  # later in-place optimizer writes
            arr += 1.0
        seen = bus.latest()
        for k in before:
            assert_allclose(seen.params[k], before[k])
            assert not seen.params[k].flags.writeable
        with pytest.raises(ValueError):
            seen.params["emb"][0, 0] = 0.0

    def test_versions_strictly_increase(self):
        bus = CheckpointBus()
        bus.publish(tiny_checkpoint(version=1))
        bus.publish(tiny_checkpoint(version=2))
        with pytest.raises(ValueError, match="version"):
            bus.publish(tiny_checkpoint(version=2))

    def test_wait_for_newer_times_out(self):
        bus = CheckpointBus()
        bus.publish(tiny_checkpoint(version=1))
        assert bus.wait_for_newer(1, timeout=0.05) is None

    def test_wait_for_newer_wakes_on_publish(self):
        bus = CheckpointBus()
        bus.publish(tiny_checkpoint(version=1))

        def publish_later():
            time.sleep(0.05)
            bus.publish(tiny_checkpoint(version=2))

        t = threading.Thread(target=publish_later)
        t.start()
        got = bus.wait_for_newer(1, timeout=5.0)
        t.join()
        assert got is not None and got.version == 2


class _Versioned:
    def __init__(self, version):
        self.version = version


class TestFilterStale:
    def test_boundary(self):
        batch = [_Versioned(v) for v in (10, 8, 6, 5)]
        kept, dropped = filter_stale(batch, current_version=10, max_versions=4)
        assert [t.version for t in kept] == [10, 8, 6] and dropped == 1

    def test_zero_tolerance_keeps_only_current(self):
        batch = [_Versioned(3), _Versioned(2)]
        kept, dropped = filter_stale(batch, 3, 0)
        assert len(kept) == 1 and dropped == 1


class TestMetricsLog:
    def full_row(self, step):
        row = {c: 0.0 for c in CSV_COLUMNS}
        row.update(step=step, wall_s=1.23456, dev_bleu=42.5, queue_size=7,
                   ckpt_version=3, mean_u=1.0000004)
        return row

    def test_schema_and_formatting(self, tmp_path):
        log = MetricsLog(tmp_path / "m.csv")
        log.append(self.full_row(5))
        log.close()
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        cells = dict(zip(CSV_COLUMNS, lines[1].split(",")))
        assert cells["step"] == "5" and cells["queue_size"] == "7"
        assert cells["ckpt_version"] == "3"
        assert cells["wall_s"] == "1.235"
        assert cells["dev_bleu"] == "42.500000"
        assert cells["mean_u"] == "1.000000"

    def test_reopen_appends_without_second_header(self, tmp_path):
        path = tmp_path / "m.csv"
        log = MetricsLog(path)
        log.append(self.full_row(1))
        log.close()
        log = MetricsLog(path)
        log.append(self.full_row(2))
        log.close()
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert sum(1 for l in lines if l.startswith("step,")) == 1


def tiny_corpus(kind="copy", vocab=6, lens=(1, 3), sizes=(40, 8, 0), seed=21):
    return generate_synthetic(SyntheticTaskSpec(
        kind=kind, vocab_size=vocab, length_range=lens, sizes=sizes, seed=seed))


class TestEvaluateParams:
    def test_deterministic_and_gap_optional(self):
        corpus = tiny_corpus()
        cfg = ModelConfig(vocab_size=len(corpus.vocab), hidden_size=10, dropout=0.0)
        params = init_params(cfg, np.random.default_rng(9))
        dev = corpus.split("dev")
        a = evaluate_params(params, cfg, corpus.vocab, dev)
        b = evaluate_params(params, cfg, corpus.vocab, dev)
        assert a.dev_bleu == b.dev_bleu and a.gap is None
        c = evaluate_params(params, cfg, corpus.vocab, dev, gap_subset=4, beams=2)
        assert c.gap is not None and c.dev_bleu == a.dev_bleu

    def test_empty_dev_rejected(self):
        corpus = tiny_corpus()
        cfg = ModelConfig(vocab_size=len(corpus.vocab), hidden_size=10)
        params = init_params(cfg, np.random.default_rng(9))
        with pytest.raises(ValueError):
            evaluate_params(params, cfg, corpus.vocab, [])


def tiny_run_config(algo="mad", **overrides):
    base = dict(
        algo=algo, seed=3, task="copy", vocab_size=6, min_len=1, max_len=3,
        train_size=40, dev_size=8, test_size=0, task_seed=21,
        hidden_size=12, layer_count=1, dropout=0.0,
        t_min=0.6, t_max=1.2, n_samples=4, temperature=1.0, mrt_samples=3,
        reward="bleu", lr=1e-3, warmup_steps=2, clip_norm=1.0,
        batch_size=4, steps=6, publish_period=2, eval_period=3,
        gap_period=1, gap_subset=2, patience=100, workers=1,
        queue_capacity=64, queue_min_size=4, staleness_max_versions=4,
        beams=2, beam_alpha=1.0,
    )
    base.update(overrides)
    return RunConfig(**base)


def metrics_without_wall(path):
    rows = Path(path).read_text().splitlines()
    wall = CSV_COLUMNS.index("wall_s")
    return [tuple(c for i, c in enumerate(r.split(",")) if i != wall) for r in rows]


class TestRunTrainingSerial:
    def test_mad_run_is_deterministic(self, tmp_path):
        results = []
        for name in ("a", "b"):
            results.append(run_training(tiny_run_config(), out_dir=tmp_path / name))
        r1, r2 = results
        assert r1.steps_run == 6 and not r1.stopped_early
        assert (r1.final_path.read_bytes() == r2.final_path.read_bytes())
        assert metrics_without_wall(r1.metrics_path) == metrics_without_wall(r2.metrics_path)

    def test_seed_changes_outcome(self, tmp_path):
        r1 = run_training(tiny_run_config(seed=3), out_dir=tmp_path / "a")
        r2 = run_training(tiny_run_config(seed=4), out_dir=tmp_path / "b")
        assert r1.final_path.read_bytes() != r2.final_path.read_bytes()

    def test_run_artifacts_and_counters(self, tmp_path):
        r = run_training(tiny_run_config(), out_dir=tmp_path)
        for name in ("config.txt", "metrics.csv", "best.ckpt", "final.ckpt"):
            assert (tmp_path / name).exists()
        lines = Path(r.metrics_path).read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) >= 3
        assert r.counters["produced"] >= r.counters["consumed"]
        assert r.history[-1]["step"] == 6
        final = load_checkpoint(r.final_path)
        assert final.step == 6 and final.version == 3  # 6 steps / publish every 2

    def test_best_checkpoint_tracks_peak(self, tmp_path):
        r = run_training(tiny_run_config(), out_dir=tmp_path)
        best = load_checkpoint(r.best_path)
        assert best.step == r.best_step
        assert r.best_dev_bleu >= r.final_dev_bleu - 1e-9

    def test_patience_stops_early(self, tmp_path):
        cfg = tiny_run_config(steps=30, eval_period=1, patience=0)
        r = run_training(cfg, out_dir=tmp_path)
        assert r.stopped_early and r.steps_run < 30

    def test_ppo_smoke(self, tmp_path):
        r = run_training(tiny_run_config(algo="ppo", steps=3, eval_period=3),
                         out_dir=tmp_path)
        assert r.steps_run == 3 and r.final_path.exists()

    def test_zero_steps_still_writes_artifacts(self, tmp_path):
        r = run_training(tiny_run_config(algo="ce", steps=0), out_dir=tmp_path)
        assert r.steps_run == 0 and r.final_path.exists() and r.best_path.exists()


class TestRunTrainingOnPolicy:
    def test_ce_smoke(self, tmp_path):
        r = run_training(tiny_run_config(algo="ce", steps=4, eval_period=2),
                         out_dir=tmp_path)
        assert r.steps_run == 4
        assert load_checkpoint(r.final_path).step == 4

    def test_reinforce_smoke(self, tmp_path):
        r = run_training(tiny_run_config(algo="reinforce", steps=3, eval_period=3),
                         out_dir=tmp_path)
        assert r.steps_run == 3 and not r.stopped_early

    def test_mrt_smoke(self, tmp_path):
        r = run_training(tiny_run_config(algo="mrt", steps=3, eval_period=3,
                                         batch_size=6, queue_min_size=6),
                         out_dir=tmp_path)
        assert r.steps_run == 3
        assert r.counters.get("skipped_degenerate", 0) <= 3


class TestPretrainHandoff:
    def test_checkpoint_config_wins(self, tmp_path):
        ce = run_training(tiny_run_config(algo="ce", steps=2, hidden_size=12),
                          out_dir=tmp_path / "ce")
        cfg = tiny_run_config(steps=2, eval_period=2, hidden_size=24,
                              ce_checkpoint=str(ce.final_path))
        r = run_training(cfg, out_dir=tmp_path / "rl")
        assert load_checkpoint(r.final_path).config.hidden_size == 12

    def test_vocab_mismatch_rejected(self, tmp_path):
        ce = run_training(tiny_run_config(algo="ce", steps=1), out_dir=tmp_path / "ce")
        cfg = tiny_run_config(vocab_size=9, ce_checkpoint=str(ce.final_path))
        with pytest.raises(ConfigError, match="vocab"):
            run_training(cfg, out_dir=tmp_path / "rl")


class TestRunTrainingThreaded:
    def test_threaded_mad_completes(self, tmp_path):
        cfg = tiny_run_config(driver="threaded", workers=2, steps=4,
                              eval_period=2, publish_period=2)
        r = run_training(cfg, out_dir=tmp_path)
        assert r.steps_run == 4
        assert r.final_path.exists() and r.best_path.exists()
        lines = Path(r.metrics_path).read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) >= 2


class TestWorkerThroughput:
    def test_reports_positive_rate(self):
        corpus = tiny_corpus()
        cfg = tiny_run_config()
        model_cfg = ModelConfig(vocab_size=len(corpus.vocab), hidden_size=12,
                                dropout=0.0)
        params = init_params(model_cfg, np.random.default_rng(1))
        rate = measure_worker_throughput(cfg, corpus, params, model_cfg,
                                         worker_count=1, duration_s=0.4,
                                         warmup_s=0.1)
        assert rate > 0.0

    def test_rejects_zero_workers(self):
        corpus = tiny_corpus()
        cfg = tiny_run_config()
        model_cfg = ModelConfig(vocab_size=len(corpus.vocab), hidden_size=12)
        params = init_params(model_cfg, np.random.default_rng(1))
        with pytest.raises(ValueError):
            measure_worker_throughput(cfg, corpus, params, model_cfg, worker_count=0)
