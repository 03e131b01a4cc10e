"""Command-line entry point.

Subcommands: pretrain, finetune, train-phase, eval-phase, bench, inspect.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import bench as bench_mod
from . import training
from .checkpoint import Checkpoint, load_checkpoint, restore_params, save_checkpoint
from .config import Config, load_config, parse_config
from .corpus import load_corpus
from .errors import ConfigError, DataError, NumericsError
from .report import write_report
from .training import PhaseHead, evaluate_phase


class _UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(self, message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gsvit", description="GSViT training and benchmarking")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="config file (key = value lines)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("pretrain", "next-frame pre-training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--report", help="report path (default: <out>.report)")

    p = add("finetune", "one-epoch procedure fine-tuning")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--procedure", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = add("train-phase", "train the classification head on a frozen encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--report")

    p = add("eval-phase", "evaluate phase classification")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="optional metrics report path")

    p = add("bench", "inference latency/throughput benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--out", help="optional report path")

    p = add("inspect", "print a checkpoint manifest")
    p.add_argument("--checkpoint", required=True)
    return parser


def _maybe_config(args) -> Config | None:
    return load_config(args.config) if args.config else None


def _train_report_values(report: training.TrainReport) -> dict:
    values = {"kind": report.kind, "seed": report.seed, "steps": report.steps}
    values.update(report.metrics)
    return values


def _cmd_pretrain(args) -> int:
    config = _maybe_config(args) or Config.default()
    corpus = load_corpus(args.corpus)
    ckpt, report = training.pretrain(corpus, config, args.steps, args.seed)
    save_checkpoint(ckpt, args.out)
    write_report(args.report or args.out + ".report", _train_report_values(report),
                 {"loss": report.losses, "step_seconds": report.step_seconds})
    print(f"pretrain: {report.steps} steps, "
          f"loss {report.metrics.get('initial_loss', float('nan')):.6f} -> "
          f"{report.metrics.get('final_loss', float('nan')):.6f}, wrote {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    out_ckpt, report = training.finetune(ckpt, corpus, args.procedure, args.seed,
                                         config=_maybe_config(args))
    save_checkpoint(out_ckpt, args.out)
    write_report(args.report or args.out + ".report", _train_report_values(report),
                 {"loss": report.losses, "step_seconds": report.step_seconds})
    print(f"finetune[{args.procedure}]: {report.steps} steps, wrote {args.out}")
    return 0


def _cmd_train_phase(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    out_ckpt, report = training.train_phase(ckpt, corpus, _maybe_config(args),
                                            args.epochs, args.seed)
    save_checkpoint(out_ckpt, args.out)
    write_report(args.report or args.out + ".report", _train_report_values(report),
                 {"loss": report.losses})
    print(f"train-phase: {args.epochs} epochs, {report.steps} steps, wrote {args.out}")
    return 0


def _cmd_eval_phase(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    config = _maybe_config(args) or parse_config(ckpt.config_text, "<checkpoint>")
    encoder, _ = bench_mod.encoder_from_checkpoint(ckpt, config)
    head = PhaseHead(config.encoder.latent_dim, rng=0, dropout=config.train.dropout)
    head_params = [(f"head.{n}", t) for n, t in head.params()]
    head_tensors = [t for t in ckpt.tensors if t.name.startswith("head.")]
    if not head_tensors:
        raise DataError(f"{args.checkpoint}: checkpoint has no classification head tensors")
    restore_params(Checkpoint(head_tensors, ckpt.config_text), head_params)
    metrics = evaluate_phase(encoder, head, corpus)
    print(f"videos evaluated: {metrics.videos_evaluated} (skipped {metrics.videos_skipped})")
    print(f"accuracy : {metrics.accuracy_mean:.4f} +/- {metrics.accuracy_std:.4f}")
    print(f"precision: {metrics.precision_mean:.4f} +/- {metrics.precision_std:.4f}")
    print(f"recall   : {metrics.recall_mean:.4f} +/- {metrics.recall_std:.4f}")
    if args.out:
        write_report(args.out, {
            "kind": "eval-phase",
            "videos_evaluated": metrics.videos_evaluated,
            "videos_skipped": metrics.videos_skipped,
            "accuracy_mean": metrics.accuracy_mean, "accuracy_std": metrics.accuracy_std,
            "precision_mean": metrics.precision_mean, "precision_std": metrics.precision_std,
            "recall_mean": metrics.recall_mean, "recall_std": metrics.recall_std,
        }, {"per_video_accuracy": metrics.per_video_accuracy})
    return 0


def _cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    report = bench_mod.bench_inference(ckpt, args.batch, args.warmup, args.iters,
                                       threads=args.threads, seed=args.seed,
                                       config=_maybe_config(args))
    print(f"batch={report.batch} threads={report.threads} "
          f"warmup={report.warmup} iters={report.iters}")
    print(f"latency : {report.mean_ms:.3f} +/- {report.std_ms:.3f} ms per batch")
    print(f"throughput: {report.images_per_sec:.1f} images/sec")
    ref_mean, ref_std = bench_mod.REFERENCE_LATENCY_MS
    print(f"reference (published GSViT figures, RTX A5500): "
          f"{ref_mean} +/- {ref_std} ms per frame, "
          f"{bench_mod.REFERENCE_IMAGES_PER_SEC} images/sec")
    if args.out:
        write_report(args.out, {
            "kind": "bench", "batch": report.batch, "warmup": report.warmup,
            "iters": report.iters, "threads": report.threads,
            "mean_ms": report.mean_ms, "std_ms": report.std_ms,
            "images_per_sec": report.images_per_sec,
        }, {"latencies_ms": report.latencies_ms})
    return 0


def _cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    print(f"tensors: {len(ckpt.tensors)}")
    for t in ckpt.tensors:
        shape = "x".join(str(s) for s in t.data.shape)
        flag = "tunable" if t.tunable else "frozen"
        print(f"  {t.name:<48} {shape:>16} {flag}")
    print(f"total params: {ckpt.total_params}")
    print(f"tunable params: {ckpt.tunable_params}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "train-phase": _cmd_train_phase,
    "eval-phase": _cmd_eval_phase,
    "bench": _cmd_bench,
    "inspect": _cmd_inspect,
}


def cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse --help
            return int(exc.code or 0)
        if args.command is None:
            raise _UsageError(parser, "a subcommand is required")
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc.parser.format_usage(), end="", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
