"""
Command line entry point: ``gen``, ``train``, ``eval``, ``gradcheck``, ``report``.

Every failure prints a single ``scenehyper: error: ...`` line on stderr and
exits with a nonzero status.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CommandError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CommandError(message)


def _thresholds(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated IoU thresholds, got {text!r}")
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError(f"IoU thresholds must lie in (0, 1], got {text!r}")
    return values


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenehyper", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--specs", required=True, help="scene type JSON file")
    gen.add_argument("--scenes", required=True, type=_positive_int)
    gen.add_argument("--seed", required=True, type=int)
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train a detector")
    train.add_argument("--config", required=True)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--iou", type=_thresholds, default=[0.25, 0.5])
    ev.add_argument("--dump", help="write predictions to this file")
    ev.add_argument("--split", default="val", choices=("train", "val"))

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--component", required=True)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)

    rep = sub.add_parser("report", help="figures and comparison table from run directories")
    rep.add_argument("--runs", required=True, nargs="+")
    rep.add_argument("--out", required=True)
    return parser


def _gen(args) -> int:
    from .data import build_dataset, ensure_dir_writable, load_specs

    specs = load_specs(args.specs)
    ensure_dir_writable(args.out)
    entries = build_dataset(specs, args.scenes, args.seed, args.out)
    print(f"wrote {len(entries)} scenes to {args.out}")
    return 0


def _train(args) -> int:
    from .data import read_manifest, read_split
    from .harness.config import load_config
    from .harness.train import train

    config = load_config(args.config)
    read_manifest(Path(args.data) / "manifest.txt")
    read_split(args.data, "train")
    read_split(args.data, "val")
    best = train(config, args.data, args.out)
    print(f"best checkpoint: {best}")
    return 0


def _eval(args) -> int:
    from .harness.train import evaluate

    if not Path(args.ckpt).is_file():
        raise FileNotFoundError(f"checkpoint {args.ckpt} does not exist")
    report = evaluate(args.ckpt, args.data, args.iou, args.dump, split=args.split)
    sys.stdout.write(report.to_text())
    return 0


def _gradcheck(args) -> int:
    from .harness.gradcheck import gradcheck

    err = gradcheck(args.component, args.seed)
    ok = err <= args.tol
    print(f"{args.component} max_relative_error {err:.3e} {'ok' if ok else 'FAILED'}")
    if not ok:
        raise CommandError(f"{args.component}: gradient error {err:.3e} exceeds {args.tol:g}")
    return 0


def _report(args) -> int:
    from .harness.report import report

    for path in report(args.runs, args.out):
        print(path)
    return 0


COMMANDS = {"gen": _gen, "train": _train, "eval": _eval, "gradcheck": _gradcheck, "report": _report}


def _one_line(exc: BaseException) -> str:
    text = str(exc).strip() or type(exc).__name__
    if isinstance(exc, KeyError) and exc.args:
        text = f"missing key {exc.args[0]!r}"
    return " ".join(text.split())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CommandError as exc:
        print(f"scenehyper: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # every failure becomes one line
        print(f"scenehyper: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
