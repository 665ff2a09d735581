import random

import pytest

from tablesieve.corpus import read_manifest
from tablesieve.errors import DataError
from tablesieve.html_features import FEATURE_NAMES, extract_features
from tablesieve.synth import (
    GENUINE_KINDS,
    LAYOUT_KINDS,
    generate_corpus,
    generate_table,
)
from tablesieve.table_model import parse_table, passes_size_filter

IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def test_every_kind_parses_and_passes_size_filter():
    for kind in GENUINE_KINDS + LAYOUT_KINDS:
        for trial in range(20):
            html = generate_table(kind, random.Random(f"{kind}|{trial}"))
            grid = parse_table(html)
            assert passes_size_filter(grid), (kind, trial, grid.n_rows, grid.n_cols)


def test_generation_is_deterministic():
    for kind in GENUINE_KINDS + LAYOUT_KINDS:
        a = generate_table(kind, random.Random("fixed"))
        b = generate_table(kind, random.Random("fixed"))
        assert a == b


def test_unknown_kind_rejected():
    with pytest.raises(DataError, match="kind"):
        generate_table("pie_chart", random.Random(0))


def test_archetypes_have_their_signature_features():
    rng = random.Random(5)
    grid = parse_table(generate_table("data_grid", rng))
    v = extract_features(grid)
    assert v[IDX["ratio_header"]] > 0
    assert v[IDX["ratio_numeric"]] > 0.2

    grid = parse_table(generate_table("link_bar", random.Random(5)))
    v = extract_features(grid)
    assert v[IDX["ratio_link"]] == 1.0
    assert v[IDX["ratio_header"]] == 0.0

    grid = parse_table(generate_table("image_grid", random.Random(5)))
    v = extract_features(grid)
    assert v[IDX["ratio_image"]] == 1.0

    grid = parse_table(generate_table("nesting_shell", random.Random(5)))
    v = extract_features(grid)
    assert v[IDX["has_nested"]] == 1.0

    grid = parse_table(generate_table("attribute_value", random.Random(5)))
    v = extract_features(grid)
    assert v[IDX["first_col_header_ratio"]] == 1.0
    assert v[IDX["n_cols"]] == 2.0


def test_corpus_writes_files_and_manifest(tmp_path):
    manifest = generate_corpus(3, 2, tmp_path, seed=1)
    assert len(manifest.entries) == 5
    labels = [e.label for e in manifest.entries]
    assert labels.count("genuine") == 3 and labels.count("layout") == 2
    for entry in manifest.entries:
        html_file = tmp_path / entry.html_path
        assert html_file.exists()
        grid = parse_table(html_file.read_text())
        assert (grid.n_rows, grid.n_cols) == (entry.rows, entry.cols)
    again = read_manifest(tmp_path / "dataset.jsonl")
    assert [e.id for e in again.entries] == [e.id for e in manifest.entries]
    assert again.metadata.get("seed") == 1


def test_corpus_regeneration_is_byte_identical(tmp_path):
    generate_corpus(4, 4, tmp_path / "a", seed=7)
    generate_corpus(4, 4, tmp_path / "b", seed=7)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_corpus_rejects_negative_counts(tmp_path):
    with pytest.raises(DataError):
        generate_corpus(-1, 5, tmp_path)
