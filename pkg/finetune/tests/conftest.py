"""Shared fixtures: a rendered synthetic corpus built through the
pipeline CLI (the exchange contract under test) and one frozen VGG16
training run reused by the training, export, and parity tests."""

import subprocess

import pytest

from tablesieve_finetune import data
from tablesieve_finetune.export import export
from tablesieve_finetune.models import backbone_hash, build_model
from tablesieve_finetune.spec import TrainSpec
from tablesieve_finetune.training import train


def pipeline(*args, cwd):
    """Run the tablesieve console script; tests only consume its files."""
    proc = subprocess.run(
        ["tablesieve", *map(str, args)], cwd=cwd, capture_output=True, text=True
    )
    assert proc.returncode == 0, f"tablesieve {' '.join(map(str, args))}: {proc.stderr}"
    return proc


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """100 genuine + 100 layout synthetic tables, split, rendered, and
    HTML-featurized. Splits: 120 train / 40 val / 40 test."""
    root = tmp_path_factory.mktemp("corpus")
    pipeline("synth", "--n-genuine", 100, "--n-layout", 100,
             "--out", "corpus", "--seed", 7, cwd=root)
    pipeline("split", "--manifest", "corpus/dataset.jsonl",
             "--test-frac", 0.2, "--val-frac", 0.25, "--seed", 7, cwd=root)
    pipeline("render", "--manifest", "corpus/dataset.jsonl", "--out", "images",
             cwd=root)
    pipeline("featurize", "--manifest", "corpus/dataset.jsonl", "--kind", "html",
             "--out", "features.csv", cwd=root)
    return root


@pytest.fixture(scope="session")
def dataset(corpus):
    return data.read_dataset(
        corpus / "corpus" / "dataset.jsonl", image_dir=corpus / "images"
    )


@pytest.fixture(scope="session")
def subset(dataset):
    """Balanced slices for fast smoke tests: subset(tag, per_class)."""

    def pick(tag: str, per_class: int) -> data.Dataset:
        pool = dataset.split(tag).samples
        picked = []
        for label in ("genuine", "layout"):
            matching = [s for s in pool if s.label == label]
            assert len(matching) >= per_class, f"corpus too small for {label}"
            picked.extend(matching[:per_class])
        return data.Dataset(picked, dataset.metadata)

    return pick


@pytest.fixture(scope="session")
def html_features(corpus):
    return data.read_html_features(corpus / "features.csv")


@pytest.fixture(scope="session")
def frozen_run(dataset, tmp_path_factory):
    """One complete frozen VGG16 run: train on the full splits, export.
    Backbone weights are seeded random (no pretrained weights in the
    test environment); the separability of the synthetic styles is what
    the accuracy criterion rides on."""
    out = tmp_path_factory.mktemp("frozen-vgg16")
    spec = TrainSpec.for_mode("vgg16", "frozen", max_epochs=10)
    model = build_model(spec, allow_random_init=True)
    hash_before = backbone_hash(model)
    history = train(model, dataset.split("train"), dataset.split("val"), spec)
    manifest_path = export(model, out)
    return {
        "model": model,
        "spec": spec,
        "history": history,
        "hash_before": hash_before,
        "out": out,
        "manifest_path": manifest_path,
    }
