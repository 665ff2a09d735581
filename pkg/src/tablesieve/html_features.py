"""Explicit HTML features computed from a parsed table grid.

The catalogue covers global layout statistics (row/column counts, cell
text length moments), content-type frequencies (numeric, alphabetic,
link, image, form, header cells), and local per-row/per-column
aggregates (length variance, type homogeneity, first-row signals).
Ratio features count origin cells only; per-row/column aggregates see
the full span-expanded grid, where a continuation slot carries its
origin cell's text and type.
"""

from __future__ import annotations

import csv
import math
import unicodedata
from dataclasses import dataclass

import numpy as np

from .table_model import Cell, TableGrid

CATALOGUE_VERSION = 1

FEATURE_NAMES = [
    "n_rows",
    "n_cols",
    "cell_count",
    "avg_cell_chars",
    "var_cell_chars",
    "min_cell_chars",
    "max_cell_chars",
    "row_col_ratio",
    "ratio_empty",
    "ratio_numeric",
    "ratio_alphabetic",
    "ratio_link",
    "ratio_image",
    "ratio_form",
    "ratio_header",
    "ratio_colspan",
    "ratio_rowspan",
    "has_nested",
    "avg_row_len_var",
    "avg_col_len_var",
    "col_type_homogeneity",
    "row_type_homogeneity",
    "first_row_header_ratio",
    "first_col_header_ratio",
    "first_row_distinctness",
    "avg_links_per_cell",
]

# Features guaranteed to lie in [0, 1].
RATIO_FEATURES = frozenset(
    name
    for name in FEATURE_NAMES
    if name.startswith("ratio_")
    or name.endswith(("_homogeneity", "_header_ratio", "_distinctness"))
    or name == "has_nested"
)

NUMERIC_CHARS = set("0123456789.,-%")
TYPE_THRESHOLD = 0.8


@dataclass(frozen=True)
class FeatureCatalogue:
    names: tuple[str, ...]
    version: int


CATALOGUE = FeatureCatalogue(names=tuple(FEATURE_NAMES), version=CATALOGUE_VERSION)


def _is_numeric_text(text: str) -> bool:
    chars = [ch for ch in text if not ch.isspace()]
    if not chars:
        return False
    hits = sum(
        1 for ch in chars if ch in NUMERIC_CHARS or unicodedata.category(ch) == "Sc"
    )
    return hits / len(chars) >= TYPE_THRESHOLD


def _is_alphabetic_text(text: str) -> bool:
    chars = [ch for ch in text if not ch.isspace()]
    if not chars:
        return False
    return sum(1 for ch in chars if ch.isalpha()) / len(chars) >= TYPE_THRESHOLD


def cell_type(cell: Cell) -> str:
    """Coarse content type of a cell: empty, numeric, alphabetic, or mixed."""
    if cell.text == "":
        return "empty"
    if _is_numeric_text(cell.text):
        return "numeric"
    if _is_alphabetic_text(cell.text):
        return "alphabetic"
    return "mixed"


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def _pvar(xs: list[float]) -> float:
    if not xs:
        return 0.0
    m = _mean(xs)
    return sum((x - m) ** 2 for x in xs) / len(xs)


def _homogeneity(lines: list[list[Cell]]) -> float:
    # Mean over lines of (dominant type count / line length).
    scores = []
    for line in lines:
        if not line:
            continue
        counts: dict[str, int] = {}
        for cell in line:
            t = cell_type(cell)
            counts[t] = counts.get(t, 0) + 1
        scores.append(max(counts.values()) / len(line))
    return _mean(scores)


def extract_features(grid: TableGrid) -> list[float]:
    """Compute the fixed 26-feature vector for one grid, catalogue order."""
    origins = grid.origin_cells()
    n = len(origins)
    lengths = [len(c.text) for c in origins]

    def ratio(pred) -> float:
        return sum(1 for c in origins if pred(c)) / n if n else 0.0

    rows = [grid.row(r) for r in range(grid.n_rows)]
    cols = [grid.column(c) for c in range(grid.n_cols)]

    first_row_distinct = 0.0
    if grid.n_rows >= 2 and grid.n_cols >= 1:
        distinct = 0
        for col in cols:
            if all(col[0].text != below.text for below in col[1:]):
                distinct += 1
        first_row_distinct = distinct / grid.n_cols

    values = [
        float(grid.n_rows),
        float(grid.n_cols),
        float(n),
        _mean(lengths),
        _pvar(lengths),
        float(min(lengths)) if lengths else 0.0,
        float(max(lengths)) if lengths else 0.0,
        grid.n_rows / grid.n_cols if grid.n_cols else 0.0,
        ratio(lambda c: c.is_empty),
        ratio(lambda c: cell_type(c) == "numeric"),
        ratio(lambda c: cell_type(c) == "alphabetic"),
        ratio(lambda c: c.n_links > 0),
        ratio(lambda c: c.n_images > 0),
        ratio(lambda c: c.n_form_controls > 0),
        ratio(lambda c: c.is_header),
        ratio(lambda c: c.colspan > 1),
        ratio(lambda c: c.rowspan > 1),
        1.0 if grid.has_nested_table else 0.0,
        _mean([_pvar([len(c.text) for c in row]) for row in rows]),
        _mean([_pvar([len(c.text) for c in col]) for col in cols]),
        _homogeneity(cols),
        _homogeneity(rows),
        _mean([1.0 if c.is_header else 0.0 for c in rows[0]]) if rows else 0.0,
        _mean([1.0 if c.is_header else 0.0 for c in cols[0]]) if cols else 0.0,
        first_row_distinct,
        (sum(c.n_links for c in origins) / n) if n else 0.0,
    ]
    assert len(values) == len(FEATURE_NAMES)
    assert all(math.isfinite(v) for v in values)
    return values


def select_features_cfs(
    dataset: list[tuple[list[float], str]], k: int
) -> list[int]:
    """Greedy forward correlation-based feature selection.

    Merit of a subset S of size m is
        (m * mean |corr(f, label)|) / sqrt(m + m(m-1) * mean |corr(f_i, f_j)|)
    with Pearson correlation, labels encoded layout=0 / genuine=1, and
    zero-variance columns given correlation 0. Returns exactly k indices
    in selection order; ties prefer the lower index.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    x = np.asarray([vec for vec, _ in dataset], dtype=np.float64)
    y = np.asarray([1.0 if lab == "genuine" else 0.0 for _, lab in dataset])
    n_feat = x.shape[1]
    if not 1 <= k <= n_feat:
        raise ValueError(f"k must be in 1..{n_feat}, got {k}")

    def safe_corr(a: np.ndarray, b: np.ndarray) -> float:
        sa, sb = a.std(), b.std()
        if sa == 0.0 or sb == 0.0:
            return 0.0
        return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))

    r_cf = np.array([abs(safe_corr(x[:, i], y)) for i in range(n_feat)])
    r_ff = np.zeros((n_feat, n_feat))
    for i in range(n_feat):
        for j in range(i + 1, n_feat):
            r_ff[i, j] = r_ff[j, i] = abs(safe_corr(x[:, i], x[:, j]))

    def merit(subset: list[int]) -> float:
        m = len(subset)
        cf = r_cf[subset].mean()
        if m == 1:
            return float(cf)
        ff = _mean([r_ff[a][b] for ai, a in enumerate(subset) for b in subset[ai + 1 :]])
        return float(m * cf / math.sqrt(m + m * (m - 1) * ff))

    selected: list[int] = []
    remaining = list(range(n_feat))
    while len(selected) < k:
        best_idx, best_merit = None, -math.inf
        for idx in remaining:
            m = merit(selected + [idx])
            if m > best_merit:
                best_idx, best_merit = idx, m
        selected.append(best_idx)
        remaining.remove(best_idx)
    return selected


def write_feature_csv(path, ids, vectors, labels, header_comments=()) -> None:
    """Feature matrix CSV: id, label, then one column per catalogue name."""
    with open(path, "w", newline="") as f:
        for line in header_comments:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["id", "label", *FEATURE_NAMES])
        for id_, vec, label in zip(ids, vectors, labels):
            writer.writerow([id_, label, *[repr(v) for v in vec]])


def read_feature_csv(
    path, expected_names: list[str] | None = None
) -> tuple[list[str], list[list[float]], list[str], list[str]]:
    """Inverse of write_feature_csv; skips leading # comment lines.

    Returns (ids, vectors, labels, feature_names). Any feature matrix in
    the id,label,columns... shape is accepted (visual exports use the
    same layout); pass expected_names to enforce a specific catalogue.
    """
    ids, vectors, labels = [], [], []
    with open(path, newline="") as f:
        rows = csv.reader(line for line in f if not line.startswith("#"))
        header = next(rows, None)
        if not header or header[:2] != ["id", "label"]:
            raise ValueError(f"unexpected feature CSV header in {path}")
        names = header[2:]
        if expected_names is not None and names != list(expected_names):
            raise ValueError(
                f"{path} holds columns {names[:3]}..., expected {expected_names[:3]}..."
            )
        for row in rows:
            ids.append(row[0])
            labels.append(row[1])
            vectors.append([float(v) for v in row[2:]])
    return ids, vectors, labels, names
