"""Command-line pipeline driver.

Subcommands cover the full chain: ingest WARC archives into a dataset
manifest, assign stratified splits, render tables to images, extract
HTML or visual features, train and apply classifiers, and evaluate
predictions into CSV reports plus figures. Exit codes: 0 success,
1 usage error, 2 data error, 3 external-tool error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus, evaluation, figures, rendering, synth, visual_features
from .classifiers import (
    FOREST_PRESETS,
    ForestConfig,
    MlpConfig,
    load_model,
    mlp_predict,
    mlp_train,
    preset_forest_config,
    rf_predict,
    rf_train,
    save_model,
)
from .config import PipelineConfig, load_config
from .errors import (
    DataError,
    ExternalToolError,
    RenderFailed,
    TablesieveError,
    UsageError,
)
from .html_features import FEATURE_NAMES, extract_features, read_feature_csv, write_feature_csv
from .table_model import parse_table, passes_size_filter

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse maps its own errors to exit code 2; we reserve 2 for data
    errors, so parse failures are rethrown as usage errors (exit 1)."""

    def error(self, message):
        raise UsageError(message)


def _seed(args, config: PipelineConfig) -> int:
    return config.seed if args.seed is None else args.seed


def _stamp(args, config: PipelineConfig, **extra) -> list[str]:
    """Header comments embedded in every CSV artifact."""
    lines = [f"seed={_seed(args, config)}", f"config={config.hash()}"]
    lines.extend(f"{k}={v}" for k, v in extra.items())
    return lines


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args, config: PipelineConfig) -> int:
    out_dir = Path(args.out)
    manifest = synth.generate_corpus(
        args.n_genuine,
        args.n_layout,
        out_dir,
        seed=_seed(args, config),
        extra_metadata={"config": config.hash()},
    )
    print(f"wrote {len(manifest.entries)} tables + dataset.jsonl to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args, config: PipelineConfig) -> int:
    out_path = Path(args.out)
    html_dir = Path(args.html_dir) if args.html_dir else out_path.parent / "html"
    html_dir.mkdir(parents=True, exist_ok=True)
    seed = _seed(args, config)
    counts = {"pages": 0, "non_english": 0, "no_table": 0, "too_small": 0, "kept": 0}
    entries = []
    for warc in args.warcs:
        if not Path(warc).exists():
            raise UsageError(f"WARC file not found: {warc}")
        for page in corpus.read_warc(warc):
            counts["pages"] += 1
            if args.language_filter and not corpus.is_english(corpus.page_text(page.html)):
                counts["non_english"] += 1
                continue
            table_html = corpus.sample_one_table(page, seed)
            if table_html is None:
                counts["no_table"] += 1
                continue
            grid = parse_table(table_html)
            if not passes_size_filter(grid):
                counts["too_small"] += 1
                continue
            example_id = f"warc-{counts['kept']:06d}"
            (html_dir / f"{example_id}.html").write_text(table_html)
            entries.append(
                corpus.LabeledExample(
                    id=example_id,
                    source_url=page.url,
                    html_path=str(
                        (html_dir / f"{example_id}.html").relative_to(out_path.parent)
                        if html_dir.is_relative_to(out_path.parent)
                        else html_dir / f"{example_id}.html"
                    ),
                    rows=grid.n_rows,
                    cols=grid.n_cols,
                )
            )
            counts["kept"] += 1
    manifest = corpus.DatasetManifest(
        entries=entries,
        metadata={"seed": seed, "config": config.hash(), "counts": counts},
    )
    corpus.write_manifest(manifest, out_path)
    print(
        f"ingested {counts['kept']} tables from {counts['pages']} pages "
        f"(skipped: {counts['non_english']} non-English, {counts['no_table']} "
        f"without tables, {counts['too_small']} under 2x2)"
    )
    return 0


# ---------------------------------------------------------------------------
# split


def cmd_split(args, config: PipelineConfig) -> int:
    manifest_path = Path(args.manifest)
    manifest = corpus.read_manifest(manifest_path)
    unlabeled = [e.id for e in manifest.entries if e.label is None]
    if unlabeled:
        raise DataError(
            f"cannot split unlabeled entries: {unlabeled[:5]}"
            + ("..." if len(unlabeled) > 5 else "")
        )
    ids = [e.id for e in manifest.entries]
    labels = [e.label for e in manifest.entries]
    seed = _seed(args, config)
    train, val, test = evaluation.stratified_split(
        ids, labels, args.test_frac, args.val_frac, seed
    )
    assignment = {i: "train" for i in train}
    assignment.update({i: "val" for i in val})
    assignment.update({i: "test" for i in test})
    for entry in manifest.entries:
        entry.split = assignment[entry.id]
    manifest.metadata = dict(manifest.metadata or {})
    manifest.metadata.update(
        {
            "split_seed": seed,
            "config": config.hash(),
            "test_frac": args.test_frac,
            "val_frac": args.val_frac,
        }
    )
    out = Path(args.out) if args.out else manifest_path
    corpus.write_manifest(manifest, out)
    print(f"split {len(ids)} entries: {len(train)} train / {len(val)} val / {len(test)} test")
    return 0


# ---------------------------------------------------------------------------
# render


def cmd_render(args, config: PipelineConfig) -> int:
    manifest_path = Path(args.manifest)
    manifest = corpus.read_manifest(manifest_path)
    image_dir = Path(args.out)
    image_dir.mkdir(parents=True, exist_ok=True)
    renderer = args.renderer or config.renderer
    timeout = args.render_timeout_secs or config.render_timeout_secs
    policy = args.asset_policy or config.asset_policy
    log_entries = []
    failures = 0
    for entry in manifest.entries:
        html_path = _resolve(manifest_path.parent, entry.html_path)
        job_html = html_path
        if policy == "fetch":
            html = html_path.read_text()
            rewritten, _ = rendering.fetch_assets(
                html, entry.source_url, image_dir / "assets" / entry.id
            )
            job_html = image_dir / "assets" / entry.id / "page.html"
            job_html.parent.mkdir(parents=True, exist_ok=True)
            job_html.write_text(rewritten)
        job = rendering.RenderJob(
            example_id=entry.id,
            html_path=job_html,
            output_path=image_dir / f"{entry.id}.png",
            asset_policy=policy,
            timeout=timeout,
        )
        try:
            out = rendering.render_table(job, renderer=renderer)
        except RenderFailed as exc:
            failures += 1
            entry.image_path = None
            log_entries.append(
                rendering.render_log_entry(entry.id, "failed", error=str(exc))
            )
            log.warning("render failed for %s: %s", entry.id, exc)
            continue
        entry.image_path = str(out.relative_to(image_dir))
        log_entries.append(
            rendering.render_log_entry(entry.id, "ok", image_path=entry.image_path)
        )
    rendering.write_render_log(image_dir / "render_log.jsonl", log_entries)
    manifest.metadata = dict(manifest.metadata or {})
    manifest.metadata.update(
        {"image_dir": str(image_dir), "render_failures": failures, "config": config.hash()}
    )
    corpus.write_manifest(manifest, manifest_path)
    rendered = len(manifest.entries) - failures
    print(f"rendered {rendered}/{len(manifest.entries)} tables into {image_dir}")
    if manifest.entries and rendered == 0:
        raise ExternalToolError(
            f"all {len(manifest.entries)} render jobs failed; see "
            f"{image_dir / 'render_log.jsonl'}"
        )
    return 0


def _resolve(base: Path, maybe_relative: str) -> Path:
    path = Path(maybe_relative)
    return path if path.is_absolute() else base / path


# ---------------------------------------------------------------------------
# featurize


def cmd_featurize(args, config: PipelineConfig) -> int:
    manifest_path = Path(args.manifest)
    manifest = corpus.read_manifest(manifest_path)
    entries = manifest.entries
    if args.split != "all":
        entries = manifest.by_split(args.split)
    if not entries:
        raise DataError(f"no manifest entries in split {args.split!r}")
    ids = [e.id for e in entries]
    labels = [e.label or "unlabeled" for e in entries]
    stamp = _stamp(args, config, kind=args.kind, split=args.split)

    if args.kind == "html":
        vectors = []
        for entry in entries:
            html = _resolve(manifest_path.parent, entry.html_path).read_text()
            vectors.append(extract_features(parse_table(html)))
        write_feature_csv(args.out, ids, vectors, labels, header_comments=stamp)
    else:
        if not args.model:
            raise UsageError(f"featurize --kind {args.kind} requires --model")
        model_manifest = visual_features.load_manifest(
            config.model_manifest_path(args.model)
        )
        missing = [e.id for e in entries if not e.image_path]
        if missing:
            raise DataError(
                f"{len(missing)} entries have no rendered image (run render "
                f"first): {missing[:5]}" + ("..." if len(missing) > 5 else "")
            )
        image_base = Path(
            (manifest.metadata or {}).get("image_dir", manifest_path.parent)
        )
        extract = (
            visual_features.extract_top
            if args.kind == "visual-top"
            else visual_features.extract_all
        )
        scope = "top" if args.kind == "visual-top" else "all"
        vectors = []
        for entry in entries:
            tensor = rendering.preprocess(
                _resolve(image_base, entry.image_path), model_manifest
            )
            vectors.append(extract(tensor, model_manifest).values)
        names = visual_features.visual_feature_names(model_manifest, scope)
        visual_features.write_visual_csv(
            args.out, names, ids, vectors, labels, header_comments=stamp
        )
    print(f"wrote {len(ids)} {args.kind} feature rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train / classify


def _load_joined_features(paths: list[str]):
    """Read one or more feature CSVs and join them column-wise by id."""
    ids, labels, names = None, None, []
    matrix = None
    for path in paths:
        p_ids, p_vecs, p_labels, p_names = read_feature_csv(path)
        if not p_ids:
            raise DataError(f"feature file {path} has no rows")
        if ids is None:
            ids, labels = p_ids, p_labels
            matrix = [list(v) for v in p_vecs]
            names = list(p_names)
            continue
        lookup = {i: k for k, i in enumerate(p_ids)}
        missing = [i for i in ids if i not in lookup]
        extra = sorted(set(p_ids) - set(ids))
        if missing or extra:
            raise DataError(
                f"feature files disagree on ids: {path} is missing "
                f"{missing[:5]} and adds {extra[:5]}"
            )
        for row, example_id in enumerate(ids):
            k = lookup[example_id]
            if p_labels[k] != labels[row]:
                raise DataError(
                    f"label mismatch for {example_id!r}: "
                    f"{labels[row]!r} vs {p_labels[k]!r} in {path}"
                )
            matrix[row].extend(p_vecs[k])
        names.extend(p_names)
    return ids, np.asarray(matrix, dtype=np.float64), labels, names


def _feature_scope(names: list[str]) -> str:
    html = set(FEATURE_NAMES)
    got = set(names)
    if got == html:
        return "html"
    if got & html:
        return "joint"
    return "visual"


def cmd_train(args, config: PipelineConfig) -> int:
    ids, x, labels, names = _load_joined_features(args.features)
    scope = _feature_scope(names)
    seed = _seed(args, config)
    stamp = _stamp(args, config, classifier=args.classifier, scope=scope)

    if args.classifier == "rf":
        presets = dict(FOREST_PRESETS)
        presets.update(config.presets)
        if args.preset not in presets:
            raise UsageError(
                f"unknown preset {args.preset!r}; choose from {sorted(presets)}"
            )
        if args.preset in FOREST_PRESETS:
            forest_config = preset_forest_config(args.preset, seed=seed)
        else:
            forest_config = ForestConfig(seed=seed, **presets[args.preset])
        model = rf_train(x, labels, forest_config, feature_scope=scope)
        save_model(model, args.out)
        log_doc = {"preset": args.preset, "n_trees": forest_config.n_trees}
    else:
        val_paths = args.val_features or []
        if not val_paths:
            raise UsageError("--classifier mlp requires --val-features")
        _, xv, val_labels, val_names = _load_joined_features(val_paths)
        if val_names != names:
            raise DataError("validation features have different columns")
        mlp_config = MlpConfig(
            hidden_units=args.hidden_units,
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            max_epochs=args.max_epochs,
            patience=args.patience,
            seed=seed,
        )
        model = mlp_train(x, labels, mlp_config, xv, val_labels, feature_scope=scope)
        save_model(model, args.out)
        log_doc = {"hidden_units": args.hidden_units, "max_epochs": args.max_epochs}

    log_doc.update(
        {
            "classifier": args.classifier,
            "n_train": len(ids),
            "n_features": x.shape[1],
            "scope": scope,
            "seed": seed,
            "config": config.hash(),
        }
    )
    log_path = Path(args.out).with_suffix(".log.json")
    log_path.write_text(json.dumps(log_doc, indent=2, sort_keys=True))
    print(f"trained {args.classifier} on {len(ids)} rows x {x.shape[1]} features -> {args.out}")
    return 0


def cmd_classify(args, config: PipelineConfig) -> int:
    model = load_model(args.model)
    ids, x, _, names = _load_joined_features(args.features)
    nested_idx = None
    if args.nested_default_layout:
        if "has_nested" not in names:
            raise UsageError(
                "--nested-default-layout needs the HTML feature columns "
                "(has_nested is absent from the given features)"
            )
        nested_idx = names.index("has_nested")
    predict = rf_predict if hasattr(model, "trees") else mlp_predict
    rows = []
    for i, example_id in enumerate(ids):
        if nested_idx is not None and x[i, nested_idx] >= 1.0:
            rows.append((example_id, "layout", 0.0))
            continue
        label, prob = predict(model, x[i])
        rows.append((example_id, label, prob))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        for line in _stamp(args, config, model=Path(args.model).name):
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["id", "label", "probability"])
        for example_id, label, prob in rows:
            writer.writerow([example_id, label, f"{prob:.6f}"])
    n_genuine = sum(1 for _, lab, _ in rows if lab == "genuine")
    print(f"classified {len(rows)} rows ({n_genuine} genuine) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _read_predictions(path) -> tuple[list[str], list[str]]:
    ids, labels = [], []
    with open(path, newline="") as f:
        rows = csv.reader(line for line in f if not line.startswith("#"))
        header = next(rows, None)
        if not header or header[:2] != ["id", "label"]:
            raise DataError(f"{path} is not a predictions CSV (id,label,...)")
        for row in rows:
            ids.append(row[0])
            labels.append(row[1])
    if not ids:
        raise DataError(f"{path} has no prediction rows")
    return ids, labels


def _read_gold(path) -> dict[str, str]:
    path = Path(path)
    if path.suffix == ".jsonl":
        manifest = corpus.read_manifest(path)
        gold = {e.id: e.label for e in manifest.entries if e.label}
    else:
        ids, _, labels, _ = read_feature_csv(path)
        gold = {i: lab for i, lab in zip(ids, labels) if lab in evaluation.LABELS}
    if not gold:
        raise DataError(f"no labeled examples found in {path}")
    return gold


def cmd_evaluate(args, config: PipelineConfig) -> int:
    gold = _read_gold(args.gold)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    named_preds = []
    for path in args.pred:
        ids, labels = _read_predictions(path)
        missing = [i for i in ids if i not in gold]
        if missing:
            raise DataError(
                f"{path} predicts ids absent from the gold set: {missing[:5]}"
                + ("..." if len(missing) > 5 else "")
            )
        named_preds.append((Path(path).stem, ids, labels))
    base_ids = named_preds[0][1]
    for name, ids, _ in named_preds[1:]:
        if set(ids) != set(base_ids):
            raise DataError(
                f"prediction files cover different ids; {name} differs from "
                f"{named_preds[0][0]}"
            )

    stamp = _stamp(args, config, gold=Path(args.gold).name)
    reports = []
    for name, ids, labels in named_preds:
        aligned_gold = [gold[i] for i in ids]
        reports.append((name, evaluation.score(labels, aligned_gold)))
        conf = evaluation.confusion(labels, aligned_gold)
        figures.save_confusion_heatmap(
            name, conf, out_dir / "figures" / f"confusion_{name}.png"
        )
    (out_dir / "report.csv").write_text(
        evaluation.report_csv(reports, header_comments=stamp)
    )
    figures.save_metric_bars(reports, out_dir / "figures" / "metrics.png")

    pairs = []
    for a in range(len(named_preds)):
        for b in range(a + 1, len(named_preds)):
            name_a, ids_a, labels_a = named_preds[a]
            name_b, ids_b, labels_b = named_preds[b]
            by_id = dict(zip(ids_b, labels_b))
            aligned_b = [by_id[i] for i in ids_a]
            aligned_gold = [gold[i] for i in ids_a]
            pairs.append(
                (name_a, name_b, evaluation.mcnemar(labels_a, aligned_b, aligned_gold))
            )
    (out_dir / "mcnemar.csv").write_text(
        evaluation.mcnemar_csv(pairs, header_comments=stamp)
    )
    print(evaluation.report_text(reports), end="")
    for name_a, name_b, res in pairs:
        print(
            f"mcnemar {name_a} vs {name_b}: b={res.b} c={res.c} "
            f"statistic={res.statistic:.6g} p={res.p_value:.6g}"
        )
    print(f"wrote report.csv, mcnemar.csv, figures/ to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tablesieve", description=__doc__)
    parser.add_argument("--config", help="YAML config file with defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        return p

    p = add("synth", cmd_synth, "generate a labeled synthetic table corpus")
    p.add_argument("--n-genuine", type=int, required=True)
    p.add_argument("--n-layout", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = add("ingest", cmd_ingest, "sample tables out of WARC archives")
    p.add_argument("warcs", nargs="+", help="WARC files (.warc or .warc.gz)")
    p.add_argument("--out", required=True, help="manifest path (dataset.jsonl)")
    p.add_argument("--html-dir", help="directory for table HTML files")
    p.add_argument("--no-language-filter", dest="language_filter",
                   action="store_false", help="keep non-English pages")

    p = add("split", cmd_split, "assign stratified train/val/test tags")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-frac", type=float, default=0.20)
    p.add_argument("--val-frac", type=float, default=0.20,
                   help="fraction of the remainder used for validation")
    p.add_argument("--out", help="write the tagged manifest here instead of in place")

    p = add("render", cmd_render, "render each table to a PNG image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="image output directory")
    p.add_argument("--renderer", help="renderer executable")
    p.add_argument("--render-timeout-secs", type=float, default=None)
    p.add_argument("--asset-policy", choices=["fetch", "offline"], default=None)

    p = add("featurize", cmd_featurize, "extract feature CSVs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=["html", "visual-top", "visual-all"],
                   required=True)
    p.add_argument("--model", help="model name from the config, or a model.json path")
    p.add_argument("--split", default="all",
                   choices=["all", "train", "val", "test", "unsplit"])
    p.add_argument("--out", required=True, help="feature CSV path")

    p = add("train", cmd_train, "train a classifier on feature CSVs")
    p.add_argument("--features", action="append", required=True,
                   help="feature CSV; repeat to join columns by id")
    p.add_argument("--classifier", choices=["rf", "mlp"], default="rf")
    p.add_argument("--preset", default="dwtc-retrained",
                   help="forest preset name")
    p.add_argument("--val-features", action="append",
                   help="validation CSVs (mlp early stopping)")
    p.add_argument("--hidden-units", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--out", required=True, help="model file path")

    p = add("classify", cmd_classify, "apply a trained model to feature CSVs")
    p.add_argument("--model", required=True)
    p.add_argument("--features", action="append", required=True)
    p.add_argument("--nested-default-layout", action="store_true",
                   help="label tables containing nested tables as layout "
                        "without invoking the model (HTML features only)")
    p.add_argument("--out", required=True, help="predictions CSV path")

    p = add("evaluate", cmd_evaluate, "score predictions against gold labels")
    p.add_argument("--pred", action="append", required=True,
                   help="predictions CSV; repeat to compare classifiers")
    p.add_argument("--gold", required=True,
                   help="gold labels: feature CSV or dataset.jsonl")
    p.add_argument("--out-dir", default=".",
                   help="directory for report.csv, mcnemar.csv, figures/")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except RenderFailed as exc:
        print(f"render error: {exc}", file=sys.stderr)
        if exc.stderr:
            print(exc.stderr, file=sys.stderr)
        return 3
    except ExternalToolError as exc:
        print(f"external tool error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TablesieveError as exc:  # base-class fallback
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
