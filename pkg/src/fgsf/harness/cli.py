"""Command line: ``fgsf train | analyze | sweep``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime abort,
3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from fgsf.harness.analyze import LogFormatError, analyze_log
from fgsf.harness.checkpoint import CheckpointError, read_checkpoint
from fgsf.harness.config import ConfigError, build_config, config_to_dict, read_config_file
from fgsf.harness.runner import run_training
from fgsf.harness.sweep import sweep
from fgsf.loop import RunAborted
from fgsf.pbdetect import SavGolSpec, SeriesTooShortError, Thresholds

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 1, 2, 3

# flag dest -> (config section, key)
OVERRIDES = {
    "env": ("run", "env"),
    "method": ("run", "method"),
    "steps": ("run", "total_env_steps"),
    "seed": ("run", "seed"),
    "out": ("run", "output_dir"),
    "log_every": ("run", "log_every"),
    "eval_every": ("run", "eval_every"),
    "checkpoint_every": ("run", "checkpoint_every"),
    "lam": ("scrub", "lambda"),
    "scrub_freq": ("scrub", "frequency"),
    "scrub_target": ("scrub", "target"),
    "estimator": ("scrub", "estimator"),
    "replay_ratio": ("sac", "replay_ratio"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [run], [sac], [scrub], [metrics] sections")
    p.add_argument("--env", choices=["pendulum", "shifting_goal"])
    p.add_argument("--method", choices=["baseline", "fgsf", "reset", "gauss"])
    p.add_argument("--lambda", dest="lam", metavar="F")
    p.add_argument("--scrub-freq", metavar="N")
    p.add_argument("--scrub-target", choices=["actor", "critic", "both", "actor_only", "critic_only"])
    p.add_argument("--estimator", choices=["diag", "kfac", "ekfac"])
    p.add_argument("--replay-ratio", metavar="N")
    p.add_argument("--steps", metavar="N", help="total environment steps")
    p.add_argument("--seed", metavar="N")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--log-every", metavar="N")
    p.add_argument("--eval-every", metavar="N")
    p.add_argument("--checkpoint-every", metavar="N")
    p.add_argument("--no-wall-time", action="store_true", help="write wall_ms as 0 (bitwise-reproducible logs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgsf", description="Fisher-guided scrubbing experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="run one seeded training run")
    _run_flags(train)
    train.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint file")

    analyze = sub.add_parser("analyze", help="phase report for a run log")
    analyze.add_argument("--log", required=True, metavar="CSV")
    analyze.add_argument("--window", type=int, default=SavGolSpec.window)
    analyze.add_argument("--polyorder", type=int, default=SavGolSpec.polyorder)
    analyze.add_argument("--rho", type=float, default=Thresholds.rho)

    sw = sub.add_parser("sweep", help="grid over one axis and several seeds")
    _run_flags(sw)
    sw.add_argument("--axis", required=True, choices=["lambda", "replay_ratio", "target"])
    sw.add_argument("--values", required=True, help="comma-separated axis values")
    sw.add_argument("--seeds", required=True, help="comma-separated seeds")
    sw.add_argument("--workers", type=int, default=1, help="parallel run processes")
    return parser


def config_from_args(args: argparse.Namespace, base: dict[str, dict[str, str]] | None = None):
    """Config from ``base`` values, then ``--config``, then explicit flags."""
    overrides: dict[str, dict[str, str]] = {}
    for dest, (section, key) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = str(value)
    if args.no_wall_time:
        overrides.setdefault("run", {})["record_wall_time"] = "false"
    values = {section: dict(kv) for section, kv in (base or {}).items()}
    if args.config:
        for section, kv in read_config_file(args.config).items():
            values.setdefault(section, {}).update(kv)
    for section, kv in overrides.items():
        values.setdefault(section, {}).update(kv)
    return build_config(values)


def _train(args) -> int:
    # a resumed run starts from the checkpoint's own config
    base = config_to_dict(read_checkpoint(args.resume).config()) if args.resume else None
    cfg = config_from_args(args, base)
    path = run_training(cfg, resume_from=args.resume)
    print(path)
    return EXIT_OK


def _analyze(args) -> int:
    try:
        spec = SavGolSpec(args.window, args.polyorder)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = analyze_log(args.log, spec, Thresholds(rho=args.rho))
    sys.stdout.write(report.text())
    return EXIT_OK


def _sweep(args) -> int:
    cfg = config_from_args(args)
    seeds = [int(s) for s in args.seeds.replace(",", " ").split()] if args.seeds.strip() else []
    result = sweep(cfg, args.axis, args.values, seeds, workers=args.workers)
    sys.stdout.write(result.summary_csv())
    for o in result.failed:
        print(f"failed: {args.axis}={o.value} seed={o.seed}: {o.error}", file=sys.stderr)
    return EXIT_ABORT if result.failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"train": _train, "analyze": _analyze, "sweep": _sweep}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (LogFormatError, SeriesTooShortError) as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
