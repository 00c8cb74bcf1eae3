"""Command line entry points.

Subcommands::

    capsroute train      --config cfg.txt --data manifest.tsv --out run/
    capsroute eval       --checkpoint run/best.caps --data manifest.tsv --split test
    capsroute ablate     --config cfg.txt --data manifest.tsv --out ablation/
    capsroute synth      --classes 2 --per-class 10 --seed 7 --out dataset/
    capsroute preprocess --in raw_frames/ --out dataset/ [--augment]
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import CapsrouteError
from .pipeline import generate_synthetic, preprocess_tree
from .training import evaluate, run_ablation, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capsroute",
                                     description="Capsule-routing video sequence classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config and manifest")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--data", required=True, help="dataset manifest path")
    p_train.add_argument("--out", required=True, help="run output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", default="test", choices=("train", "test", "all"))
    p_eval.add_argument("--out", default=None, help="directory for confusion.csv "
                                                    "(default: alongside the checkpoint)")

    p_ablate = sub.add_parser("ablate", help="train all four loss configurations")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--out", required=True)

    p_synth = sub.add_parser("synth", help="generate the synthetic moving-pattern dataset")
    p_synth.add_argument("--classes", type=int, required=True)
    p_synth.add_argument("--per-class", type=int, required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--size", type=int, default=48, help="frame side length")
    p_synth.add_argument("--frames", type=int, default=16, help="frames per clip")

    p_prep = sub.add_parser("preprocess", help="normalize raw frame directories into a dataset")
    p_prep.add_argument("--in", dest="in_dir", required=True)
    p_prep.add_argument("--out", required=True)
    p_prep.add_argument("--augment", action="store_true",
                        help="materialize the 8 augmentation variants")
    p_prep.add_argument("--size", type=int, default=48)
    p_prep.add_argument("--window", type=int, default=16)
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)

    def show(epoch):
        print(f"epoch {epoch.epoch:4d}  margin {epoch.margin:.5f}  "
              f"recon {epoch.reconstruction:.6f}  lstm {epoch.lstm_ce:.5f}  "
              f"total {epoch.total:.5f}  train_acc {epoch.train_accuracy:.3f}  "
              f"test_acc {epoch.test_accuracy:.3f}")

    record = train(cfg, args.data, args.out, progress=show)
    best = max((e.test_accuracy for e in record.epochs), default=0.0)
    print(f"done: {len(record.epochs)} epochs, best test accuracy {best:.3f}")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from pathlib import Path

    out_dir = args.out if args.out is not None else Path(args.checkpoint).parent
    accuracy, matrix = evaluate(args.checkpoint, args.data, args.split, out_dir=out_dir)
    print(matrix.to_table())
    print(f"accuracy on {args.split}: {accuracy:.4f} ({matrix.total} clips)")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    rows = run_ablation(cfg, args.data, args.out)
    for name, accuracy in rows:
        shown = "failed" if accuracy is None else f"{accuracy:.4f}"
        print(f"{name:4s}  {shown}")
    print(f"ablation.csv written to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    manifest = generate_synthetic(args.classes, args.per_class, args.seed, args.out,
                                  side=args.size, frame_count=args.frames)
    print(f"manifest written to {manifest}")
    return 0


def _cmd_preprocess(args) -> int:
    manifest = preprocess_tree(args.in_dir, args.out, side=args.size,
                               window=args.window, augment=args.augment)
    print(f"manifest written to {manifest}")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CapsrouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
