"""Command line for motionpred: train, eval, predict, gradcheck.

Errors print one line ``error: <reason>: <message>`` to stderr and exit 2.
``gradcheck`` exits 1 when a gradient fails the tolerance.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .checkpoint import CheckpointError
from .data import DataError
from .autodiff import ShapeError


def _config(args) -> harness.RunConfig:
    cfg = harness.parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _train(args) -> int:
    cfg = _config(args)
    echo = print if args.verbose else None
    result = harness.cmd_train(cfg, args.out, resume=args.resume, echo=echo)
    print(f"final_train_mpjpe\t{result.final_train_mpjpe:.17g}")
    print(f"checkpoint\t{result.checkpoint}")
    return 0


def _eval(args) -> int:
    cfg = _config(args)
    flat = harness.cmd_eval(cfg, args.checkpoint, split=args.split)
    print(harness.format_table(flat))
    text = json.dumps(flat, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _predict(args) -> int:
    harness.cmd_predict(args.checkpoint, args.input, args.out, root_joint=args.root_joint)
    return 0


def _gradcheck(args) -> int:
    cfg = harness.parse_config(args.config) if args.config else None
    return harness.cmd_gradcheck(cfg, seed=args.seed or 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionpred", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a predictor from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory for logs and checkpoints")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="training checkpoint to continue from")
    p.add_argument("--verbose", action="store_true", help="echo log lines")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="MPJPE/Jitter report for a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_eval)

    p = sub.add_parser("predict", help="predict the frames following a sequence file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--root-joint", type=int)
    p.set_defaults(func=_predict)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, DataError, CheckpointError, harness.TrainingError, ShapeError) as exc:
        reason = getattr(exc, "reason", "shape-error")
        print(f"error: {reason}: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io-error: {exc}".replace("\n", " "), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
