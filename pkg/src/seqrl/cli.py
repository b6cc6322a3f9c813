"""Experiment driver: pretrain, train, eval, and sweep commands.

Every RunConfig field is exposed as a --flag (dashes or underscores both
accepted); --config loads a flat key=value file first, flags override.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    make_config,
    parse_config_file,
    resolve_out_dir,
)
from .metrics import (
    corpus_bleu,
    corpus_chrf,
    corpus_gleu,
    corpus_ter,
    corpus_token_f1,
)
from .model import beam_decode, greedy_decode
from .runtime import corpus_from_config, run_training

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

MAD_SWEEP_RANGES = ((0.2, 0.6), (0.4, 0.8), (0.6, 1.0), (0.8, 1.2))
BASELINE_SWEEP_TEMPS = tuple(round(0.2 + 0.1 * i, 1) for i in range(10))

DEFAULT_EVAL_BEAMS = (1, 5, 50)
DEFAULT_EVAL_ALPHAS = (None, 1.0)


class _UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; remap to the usage code.
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="flat key=value config file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar="V")


def _config_from_args(args, forced: dict | None = None) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if forced:
        overrides.update(forced)
    return make_config(file_values, overrides)


def _print_result(result) -> None:
    print(f"algo={result.algo} steps={result.steps_run} "
          f"stopped_early={result.stopped_early}")
    print(f"best_dev_bleu={result.best_dev_bleu:.3f} at step {result.best_step}")
    print(f"final_dev_bleu={result.final_dev_bleu:.3f}")
    print(f"out_dir={result.out_dir}")
    print(f"checkpoints: best={result.best_path} final={result.final_path}")
    print(f"metrics={result.metrics_path}")


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args, forced={"algo": "ce"})
    out = resolve_out_dir(cfg, f"pretrain-{cfg.task}-seed{cfg.seed}")
    result = run_training(cfg, out_dir=out)
    _print_result(result)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if cfg.algo != "ce":
        if not cfg.ce_checkpoint:
            raise _UsageError(
                f"--ce-checkpoint is required for algo={cfg.algo}")
        if not Path(cfg.ce_checkpoint).exists():
            raise _UsageError(
                f"ce checkpoint not found: {cfg.ce_checkpoint}")
    out = resolve_out_dir(cfg, f"train-{cfg.algo}-{cfg.task}-seed{cfg.seed}")
    result = run_training(cfg, out_dir=out)
    _print_result(result)
    return EXIT_OK


def _parse_alpha_list(text: str) -> list[float | None]:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        out.append(None if part in ("none", "") else float(part))
    return out


def decode_report(params, model_cfg, vocab, pairs, beams_list, alphas
                  ) -> dict:
    """Corpus metrics for greedy decoding plus BLEU for each beam setting."""
    sources = [list(src.tokens) for src, _ in pairs]
    refs = [ref for _, ref in pairs]
    greedy_hyps = [vocab.seq(tuple(t)) for t in greedy_decode(params, model_cfg,
                                                              sources)]
    report = {
        "greedy": {
            "bleu": corpus_bleu(greedy_hyps, refs),
            "gleu": corpus_gleu(greedy_hyps, refs),
            "chrf": corpus_chrf(greedy_hyps, refs),
            "ter": corpus_ter(greedy_hyps, refs),
            "token_f1": corpus_token_f1(greedy_hyps, refs),
        },
        "beam": {},
    }
    for b in beams_list:
        decoded = {}
        for alpha in alphas:
            hyps = []
            for src in sources:
                hyp = beam_decode(params, model_cfg, src, beam_size=b,
                                  alpha=0.0 if alpha is None else alpha)
                hyps.append(vocab.seq(tuple(hyp.tokens)))
            decoded[alpha] = corpus_bleu(hyps, refs)
        report["beam"][b] = decoded
    pivot_beam = 5 if 5 in beams_list else beams_list[-1]
    pivot_alpha = 1.0 if 1.0 in alphas else alphas[-1]
    report["greedy_beam_gap"] = (report["beam"][pivot_beam][pivot_alpha]
                                 - report["greedy"]["bleu"])
    report["gap_setting"] = (pivot_beam, pivot_alpha)
    return report


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    ckpt = load_checkpoint(args.checkpoint)
    corpus = corpus_from_config(cfg)
    pairs = corpus.split(args.split)
    if not pairs:
        raise _UsageError(f"empty split: {args.split}")
    if args.limit:
        pairs = pairs[: args.limit]
    beams_list = [int(b) for b in args.grid_beams.split(",")]
    alphas = _parse_alpha_list(args.grid_alpha)
    report = decode_report(ckpt.params, ckpt.config, corpus.vocab, pairs,
                           beams_list, alphas)
    g = report["greedy"]
    print(f"checkpoint={args.checkpoint} split={args.split} pairs={len(pairs)}")
    print(f"greedy: bleu={g['bleu']:.3f} gleu={g['gleu']:.3f} "
          f"chrf={g['chrf']:.3f} ter={g['ter']:.4f} token_f1={g['token_f1']:.3f}")
    lines = ["setting,alpha,bleu"]
    lines.append(f"greedy,,{g['bleu']:.6f}")
    for b in beams_list:
        for alpha in alphas:
            label = "none" if alpha is None else f"{alpha}"
            bleu = report["beam"][b][alpha]
            print(f"beams={b} alpha={label} bleu={bleu:.3f}")
            lines.append(f"beams={b},{label},{bleu:.6f}")
    pb, pa = report["gap_setting"]
    print(f"greedy_beam_gap (beams={pb}, alpha={pa}): "
          f"{report['greedy_beam_gap']:.3f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {out}")
    return EXIT_OK


def sweep_settings(algo: str) -> list[dict]:
    """The per-run config overrides enumerated by a sweep."""
    if algo == "mad":
        return [{"t_min": lo, "t_max": hi} for lo, hi in MAD_SWEEP_RANGES]
    return [{"temperature": t} for t in BASELINE_SWEEP_TEMPS]


def cmd_sweep(args) -> int:
    base = _config_from_args(args)
    if base.algo == "ce":
        raise _UsageError("sweep applies to RL algorithms only")
    root = resolve_out_dir(base, f"sweep-{base.algo}-{base.task}-seed{base.seed}")
    rows = []
    for setting in sweep_settings(base.algo):
        cfg = dataclasses.replace(base, **setting)
        if base.algo == "mad":
            name = f"t{setting['t_min']}-{setting['t_max']}"
        else:
            name = f"t{setting['temperature']}"
        result = run_training(cfg, out_dir=root / name)
        rows.append((name, setting, result.best_dev_bleu))
        print(f"{name}: best_dev_bleu={result.best_dev_bleu:.3f}")
    best = max(rows, key=lambda r: r[2])
    print(f"best_setting={best[0]} best_dev_bleu={best[2]:.3f}")
    summary = ["setting,best_dev_bleu"]
    summary += [f"{name},{bleu:.6f}" for name, _, bleu in rows]
    (root / "sweep.csv").write_text("\n".join(summary) + "\n", encoding="utf-8")
    print(f"wrote {root / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="seqrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("pretrain", help="cross-entropy pretraining")
    _add_config_flags(p_pre)
    p_pre.set_defaults(func=cmd_pretrain)

    p_train = sub.add_parser("train", help="RL fine-tuning (or ce)")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="decode a checkpoint and score it")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p_eval.add_argument("--grid-beams", dest="grid_beams",
                        default=",".join(str(b) for b in DEFAULT_EVAL_BEAMS))
    p_eval.add_argument("--grid-alpha", dest="grid_alpha", default="none,1.0")
    p_eval.add_argument("--limit", type=int, default=0,
                        help="evaluate only the first N pairs")
    p_eval.add_argument("--out", default="", help="write a CSV report here")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="temperature sweep")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_FAILURE
    except Exception as exc:  # runtime failure contract: report, exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
