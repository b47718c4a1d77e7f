"""Command-line entry point: ``tpgan {prepare,train,generate,report,baseline}``.

Every configuration key is also a flag (``--train.a_epochs 60``); ``--config``
loads a file first and flags override it. Exit codes: 0 success, 2 invalid
configuration, 3 missing or corrupt data, 4 training failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .config import ExperimentConfig
from .errors import DataError, TPGANError, ValidationError

logger = logging.getLogger("tpgan")

EXIT_OK = 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat 'section.key = value' file loaded before flags")
    group = parser.add_argument_group("configuration keys")
    for key, default in config_mod.to_pairs(ExperimentConfig()):
        group.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE", help=f"default: {default!r}")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else ExperimentConfig()
    overrides = {key: getattr(args, key) for key, _ in config_mod.to_pairs(cfg) if getattr(args, key, None) is not None}
    return config_mod.apply_overrides(cfg, overrides).validate()


def cmd_prepare(args: argparse.Namespace) -> int:
    from .experiment import prepare

    split = prepare(resolve_config(args))
    print(split.summary.read_text(), end="")
    print(f"train manifest: {split.train_manifest}\ntest manifest: {split.test_manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .experiment import run_experiment

    cfg = resolve_config(args)
    manifest = run_experiment(cfg)
    for run in manifest.runs:
        print(f"seed {run.seed}: F={run.macro_f:.4f} P={run.macro_precision:.4f} R={run.macro_recall:.4f}")
    out = cfg.output_path()
    print(f"metrics: {out / manifest.metrics_csv}\nmanifest: {out / 'run_manifest.json'}")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    from .experiment import generate_images

    paths = generate_images(args.checkpoint, args.label, args.count, args.out, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from .report import build_report

    for path in args.manifests:
        if not Path(path).is_file():
            raise DataError(f"run manifest {path} not found")
    paths = build_report(args.manifests, args.out)
    print(paths.summary.read_text(), end="")
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    from .baselines import METHODS
    from .experiment import oversample_split

    cfg = resolve_config(args)
    method = args.method or cfg.experiment.method
    if method not in METHODS:
        raise ValidationError(f"baseline needs a sampling method {METHODS}, got {method!r}")
    out = args.out or cfg.output_path() / f"oversampled_{method}"
    manifest = oversample_split(cfg, method, out)
    print(f"oversampled training split: {manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpgan", description="Three-player GAN for imbalanced image classification")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="draw the imbalanced split and write manifests")
    _add_config_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run every repetition of the configured method")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images of one class from a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--class", dest="label", type=int, required=True)
    p.add_argument("--count", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("generated"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="plots, consolidated CSV and summary over run manifests")
    p.add_argument("manifests", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("report"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("baseline", help="oversample the prepared training split only")
    _add_config_flags(p)
    p.add_argument("--method", choices=("smote", "b-smote", "adasyn"))
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TPGANError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
