"""Command-line entry point: ``magtorus <subcommand> [options]``.

Exit status: 0 on success, 1 when a validation or experiment fails, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigInvalid, MagtorusError
from .lab.config import ExperimentConfig, bundled_models
from .lab.experiments import run_experiment

SUBCOMMANDS = ("validate", "integrate", "conjugate-scan", "sigma", "green-limit", "decompose")


def _times(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--times expects comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magtorus", description="Magnetic geodesic flows on conformally flat tori.")
    parser.add_argument("--list-models", action="store_true", help="print the bundled example models and exit")
    sub = parser.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--model", help="bundled model name or model file")
        p.add_argument("--out", help="output root (run directories and runs.jsonl)")
        p.add_argument("--seed", type=int)
        if name in ("integrate", "conjugate-scan", "green-limit"):
            p.add_argument("-T", type=float, dest="T", help="time horizon")
        if name in ("integrate", "conjugate-scan", "green-limit"):
            p.add_argument("--tol", type=float)
        if name == "conjugate-scan":
            p.add_argument("--samples", type=int)
            p.add_argument("--control", action="store_true", default=None, help="also scan the beta = 0 model")
            p.add_argument("--traces", action="store_true", default=None, help="dump per-orbit detector traces")
            p.add_argument("--workers", type=int)
        if name == "sigma":
            p.add_argument("--grid", type=int, help="torus grid points per axis")
            p.add_argument("--sphere", type=int, help="sphere rule size parameter")
            p.add_argument("--refinements", type=int)
        if name in ("integrate", "green-limit"):
            p.add_argument("--times", type=_times, help="comma-separated sample times")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "list_models") and v is not None}
    overrides["kind"] = args.command
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    if args.list_models:
        print("\n".join(bundled_models()))
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        cfg = config_from_args(args)
        record = run_experiment(cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        for field, why in exc.fields.items():
            print(f"  {field}: {why}", file=sys.stderr)
        return 2
    except MagtorusError as exc:
        print(f"experiment failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"run_id": record.run_id, "ok": record.ok, "artifacts": record.artifacts,
                      "summary": record.summary}, indent=2, sort_keys=True, default=str))
    return 0 if record.ok else 1


if __name__ == "__main__":
    sys.exit(main())
