"""`finetune`: train a table-image classifier and export it for the
classification pipeline.

Reads the pipeline's dataset.jsonl (train/val splits must already be
tagged) plus the rendered image directory, fits the requested
backbone/mode, and writes the exchange-format model, its manifest, and
a history.json with per-epoch metrics.

Exit codes: 0 success, 1 usage or spec problem, 2 unusable data or
failed export check, 3 pretrained weights unavailable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import data, models, spec, training
from .errors import DataError, ExportError, SpecError, WeightsUnavailableError
from .export import export


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; 2 is the data-error code
    here, so parse failures become SpecError (exit 1) instead."""

    def error(self, message):
        raise SpecError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="finetune",
        description="Fine-tune VGG16/ResNet50 table classifiers and export "
        "them in the pipeline's model exchange format.",
    )
    parser.add_argument("--backbone", required=True, choices=spec.BACKBONES)
    parser.add_argument("--mode", required=True, choices=spec.MODES)
    parser.add_argument(
        "--data", required=True, type=Path, help="dataset.jsonl with split tags"
    )
    parser.add_argument(
        "--out", required=True, type=Path, help="output directory for model files"
    )
    parser.add_argument(
        "--images", type=Path, default=None,
        help="image directory (default: the manifest's recorded image_dir)",
    )
    parser.add_argument(
        "--html-features", type=Path, default=None,
        help="HTML feature CSV for injection mode",
    )
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--max-epochs", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--allow-random-init", action="store_true",
        help="proceed with a seeded random backbone when pretrained "
        "weights cannot be loaded",
    )
    return parser


def _make_spec(args) -> spec.TrainSpec:
    overrides = {"seed": args.seed}
    for field, value in (
        ("batch_size", args.batch_size),
        ("max_epochs", args.max_epochs),
        ("patience", args.patience),
        ("learning_rate", args.learning_rate),
    ):
        if value is not None:
            overrides[field] = value
    if args.mode == "injection":
        if args.html_features is None:
            raise SpecError("injection mode requires --html-features")
        width = len(next(iter(_html_features(args).values())))
        overrides["html_feature_dim"] = width
    elif args.html_features is not None:
        raise SpecError("--html-features only applies to injection mode")
    return spec.TrainSpec.for_mode(args.backbone, args.mode, **overrides)


def _html_features(args):
    if not hasattr(args, "_html_cache"):
        args._html_cache = data.read_html_features(args.html_features)
    return args._html_cache


def run(args) -> int:
    train_spec = _make_spec(args)
    dataset = data.read_dataset(args.data, image_dir=args.images)
    train_ds = dataset.split("train")
    val_ds = dataset.split("val")
    if not train_ds.samples or not val_ds.samples:
        raise DataError(
            "manifest needs train and val split tags; run the pipeline's "
            "split command first"
        )
    print(
        f"training {train_spec.backbone} {train_spec.mode}: "
        f"{len(train_ds.samples)} train / {len(val_ds.samples)} val, "
        f"lr {train_spec.learning_rate}, patience {train_spec.patience}"
    )

    model = models.build_model(train_spec, allow_random_init=args.allow_random_init)
    html = _html_features(args) if train_spec.mode == "injection" else None
    history = training.train(model, train_ds, val_ds, train_spec, html)
    for i, epoch in enumerate(history, start=1):
        print(
            f"epoch {i}: loss {epoch['loss']:.4f} acc {epoch['accuracy']:.3f} "
            f"val_loss {epoch['val_loss']:.4f} val_acc {epoch['val_accuracy']:.3f}"
        )

    manifest_path = export(model, args.out)
    best = max(h["val_accuracy"] for h in history)
    history_path = args.out / "history.json"
    history_path.write_text(
        json.dumps(
            {"spec": asdict(train_spec), "epochs": history, "best_val_accuracy": best},
            indent=2,
            sort_keys=True,
        )
    )
    print(f"best val accuracy {best:.3f}")
    print(f"wrote {manifest_path} and {history_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return run(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ExportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WeightsUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
