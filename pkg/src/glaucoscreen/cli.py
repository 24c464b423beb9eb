"""Command line entry point: ``glaucoscreen <stage> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .pipeline import stages
from .pipeline.config import ConfigError, load_config
from .pipeline.manifest import ManifestError
from .phantoms import make_phantom_dataset

STAGES = ("prepare", "train-seg", "segment", "features", "train-clf", "evaluate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glaucoscreen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default from config, else ./run)")

    p = sub.add_parser("prepare", parents=[common], help="grayscale, CLAHE, label masks, augmentation")
    p.add_argument("--manifest", help="dataset manifest CSV")
    sub.add_parser("train-seg", parents=[common], help="train the U-Net segmenter")
    p = sub.add_parser("segment", parents=[common], help="predict masks and score them")
    p.add_argument("--weights", help="weight file (default <out>/seg/weights.bin)")
    p.add_argument("--split", choices=("train", "test"), help="split to segment (default test)")
    p = sub.add_parser("features", parents=[common], help="CDR and rim-notching features")
    p.add_argument("--source", choices=("ground_truth", "predicted"), default="ground_truth")
    p = sub.add_parser("train-clf", parents=[common], help="grid-search and fit the RBF SVM")
    p.add_argument("--features", help="feature CSV (default from train_source)")
    p = sub.add_parser("evaluate", parents=[common], help="screen the test split, write report")
    p.add_argument("--model", help="SVM model file (default <out>/clf/svm_model.json)")
    p.add_argument("--features", help="feature CSV (default from eval_source)")

    p = sub.add_parser("make-phantoms", help="write a synthetic phantom dataset with manifest")
    p.add_argument("directory")
    p.add_argument("--n-train", type=int, default=8)
    p.add_argument("--n-test", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "make-phantoms":
        print(make_phantom_dataset(args.directory, args.n_train, args.n_test, args.size, args.seed))
        return 0

    try:
        config = load_config(
            args.config,
            seed=args.seed,
            out=args.out,
            manifest=getattr(args, "manifest", None),
            segment_split=getattr(args, "split", None),
        )
        if args.command == "prepare":
            print(stages.cmd_prepare(config))
        elif args.command == "train-seg":
            print(stages.cmd_train_seg(config))
        elif args.command == "segment":
            print(stages.cmd_segment(config, args.weights))
        elif args.command == "features":
            print(stages.cmd_features(config, args.source))
        elif args.command == "train-clf":
            print(stages.cmd_train_clf(config, args.features))
        elif args.command == "evaluate":
            report = stages.cmd_evaluate(config, args.model, args.features)
            print(json.dumps(report["classification"], indent=2, sort_keys=True))
    except (ConfigError, ManifestError, stages.StageError, ValueError, OSError) as exc:
        print(f"glaucoscreen {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
