"""Run configuration: a flat key-value record shared by every command.

Configs load from plain `key = value` text files; every key is also a
command-line flag (dashes and underscores interchangeable).  Each run
directory receives a `config.txt` snapshot sufficient to reproduce the run.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

ALGOS = ("mad", "ppo", "mrt", "reinforce", "ce")

OUTPUT_ROOT_ENV = "SEQRL_OUTPUT_ROOT"

# Reference settings of the full-scale configuration this desk-scale setup
# mirrors; not defaults here, but kept loadable as a preset for documentation
# and config templating.
FULL_SCALE_PRESET = {
    "lr": 1e-5,
    "warmup_steps": 1000,
    "clip_norm": 1.0,
    "batch_size": 256,
    "steps": 200000,
    "patience": 20000,
    "publish_period": 20,
    "n_samples": 12,
    "hidden_size": 512,
    "layer_count": 6,
    "tied_softmax": True,
}


@dataclass
class RunConfig:
    # experiment
    algo: str = "mad"
    seed: int = 0
    out_dir: str = ""  # resolved against OUTPUT_ROOT_ENV when relative/empty

    # task (synthetic unless corpus files are given)
    task: str = "cipher-reverse"
    vocab_size: int = 50
    min_len: int = 5
    max_len: int = 20
    train_size: int = 10000
    dev_size: int = 500
    test_size: int = 500
    task_seed: int = 13
    cipher_seed: int = 1
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    vocab_file: str = ""

    # model
    hidden_size: int = 48
    layer_count: int = 1
    dropout: float = 0.1
    tied_softmax: bool = True

    # sampling
    t_min: float = 0.2
    t_max: float = 0.6
    n_samples: int = 12
    temperature: float = 0.8  # single-temperature algos (ppo/mrt/reinforce)
    mrt_samples: int = 5

    # objective
    reward: str = "bleu"
    reward_norm: str = "conditional"  # {conditional, batch}
    mad_weights: str = "on"  # {on, off}
    ppo_epsilon: float = 0.2
    baseline_decay: float = 0.99

    # optimization
    lr: float = 3e-4
    warmup_steps: int = 100
    clip_norm: float = 1.0
    batch_size: int = 64
    steps: int = 5000

    # runtime
    publish_period: int = 20
    eval_period: int = 20
    gap_period: int = 250
    patience: int = 2000
    workers: int = 2
    driver: str = "serial"  # {serial, threaded}
    queue_capacity: int = 4096
    queue_min_size: int = 512
    queue_max_times_sampled: int = 1
    staleness_max_versions: int = 4
    gap_subset: int = 32  # dev prefix used for the greedy-beam gap diagnostic

    # decoding
    beams: int = 5
    beam_alpha: float = 1.0

    # pretraining handoff
    ce_checkpoint: str = ""

    def validate(self) -> None:
        def fail(field: str, why: str):
            raise ConfigError(f"config field '{field}': {why}")

        if self.algo not in ALGOS:
            fail("algo", f"must be one of {ALGOS}")
        if self.reward_norm not in ("conditional", "batch"):
            fail("reward_norm", "must be 'conditional' or 'batch'")
        if self.mad_weights not in ("on", "off"):
            fail("mad_weights", "must be 'on' or 'off'")
        if self.driver not in ("serial", "threaded"):
            fail("driver", "must be 'serial' or 'threaded'")
        if self.batch_size < 1:
            fail("batch_size", "must be positive")
        if self.steps < 0:
            fail("steps", "must be non-negative")
        if self.queue_min_size < self.batch_size:
            fail("queue_min_size", "must be >= batch_size so a full batch can be drawn")
        if self.queue_capacity < self.queue_min_size:
            fail("queue_capacity", "must be >= queue_min_size")
        if not 0 < self.t_min <= self.t_max:
            fail("t_min", "need 0 < t_min <= t_max")
        if self.temperature <= 0:
            fail("temperature", "must be positive")
        if self.n_samples < 2:
            fail("n_samples", "must be >= 2")
        if self.mrt_samples < 2:
            fail("mrt_samples", "must be >= 2")
        if self.workers < 1:
            fail("workers", "must be >= 1")
        if self.min_len < 1 or self.max_len < self.min_len:
            fail("min_len", "need 1 <= min_len <= max_len")
        for name in ("publish_period", "eval_period", "gap_period"):
            if getattr(self, name) < 1:
                fail(name, "must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            fail("dropout", "must lie in [0, 1)")

    def uses_files(self) -> bool:
        return bool(self.train_src or self.dev_src or self.test_src)


class ConfigError(ValueError):
    """Invalid configuration; maps to the usage exit code."""


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, text: str):
    field = _FIELDS.get(name)
    if field is None:
        raise ConfigError(f"unknown config key '{name}'")
    text = text.strip()
    if field.type in ("int", int):
        return int(text)
    if field.type in ("float", float):
        return float(text)
    if field.type in ("bool", bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config field '{name}': not a boolean: {text!r}")
    return text


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment; blank lines ignored."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            values[key] = _coerce(key, val)
    return values


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """File values first, explicit overrides on top, then validation."""
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key '{key}'")
            merged[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def config_text(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def write_config_snapshot(cfg: RunConfig, out_dir) -> None:
    Path(out_dir, "config.txt").write_text(config_text(cfg), encoding="utf-8")


def resolve_out_dir(cfg: RunConfig, default_name: str) -> Path:
    """out_dir if absolute, else OUTPUT_ROOT_ENV (or cwd ./runs) + name."""
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    name = cfg.out_dir or default_name
    path = Path(name)
    if not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path
