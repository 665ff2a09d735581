"""Synthetic table corpus for desk-scale runs and tests.

Genuine-like tables are small data grids (header row, typed columns)
and attribute/value listings. Layout-like tables are navigation link
bars, image grids, and page-scaffolding shells holding nested tables.
All generated tables pass the 2x2 size filter so the whole pipeline
can run on them, and generation is a pure function of the seed.
"""

from __future__ import annotations

import random
from pathlib import Path

from .corpus import DatasetManifest, LabeledExample, write_manifest
from .errors import DataError
from .table_model import parse_table

GENUINE_KINDS = ("data_grid", "attribute_value")
LAYOUT_KINDS = ("link_bar", "image_grid", "nesting_shell")

_FIELDS = ["id", "name", "city", "price", "qty", "score", "year", "share", "rank"]
_WORDS = [
    "alder", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor",
    "indigo", "juniper", "krill", "lumen", "maple", "nectar", "onyx", "pico",
]
_CITIES = ["Vienna", "Porto", "Lyon", "Graz", "Turku", "Leipzig", "Bergen", "Ghent"]
_NAV = ["Home", "News", "About", "Products", "Contact", "Search", "Login", "Help",
        "Archive", "Sitemap", "FAQ", "Jobs", "Press", "Terms"]


def _cell_value(column: str, rng: random.Random) -> str:
    if column == "id":
        return str(rng.randint(1000, 9999))
    if column == "name":
        return rng.choice(_WORDS)
    if column == "city":
        return rng.choice(_CITIES)
    if column == "price":
        return f"${rng.randint(1, 500)}.{rng.randint(0, 99):02d}"
    if column == "qty":
        return str(rng.randint(0, 250))
    if column == "score":
        return f"{rng.uniform(0, 10):.1f}"
    if column == "year":
        return str(rng.randint(1995, 2025))
    if column == "share":
        return f"{rng.uniform(0, 100):.1f}%"
    return str(rng.randint(1, 50))  # rank


def _data_grid(rng: random.Random) -> str:
    n_cols = rng.randint(3, 6)
    n_rows = rng.randint(4, 12)
    columns = rng.sample(_FIELDS, n_cols)
    border = " border=\"1\"" if rng.random() < 0.7 else ""
    parts = [f"<table{border}>"]
    parts.append("<tr>" + "".join(f"<th>{c.title()}</th>" for c in columns) + "</tr>")
    for _ in range(n_rows):
        parts.append(
            "<tr>" + "".join(f"<td>{_cell_value(c, rng)}</td>" for c in columns) + "</tr>"
        )
    parts.append("</table>")
    return "".join(parts)


def _attribute_value(rng: random.Random) -> str:
    n_rows = rng.randint(4, 10)
    attrs = rng.sample(_FIELDS, min(n_rows, len(_FIELDS)))
    border = " border=\"1\"" if rng.random() < 0.5 else ""
    parts = [f"<table{border}>"]
    for i in range(n_rows):
        key = attrs[i % len(attrs)]
        parts.append(
            f"<tr><th>{key.title()}</th><td>{_cell_value(key, rng)}</td></tr>"
        )
    parts.append("</table>")
    return "".join(parts)


def _link_bar(rng: random.Random) -> str:
    n_cols = rng.randint(4, 8)
    n_rows = rng.randint(2, 3)
    words = rng.sample(_NAV, min(n_cols * n_rows, len(_NAV)))
    parts = ["<table>"]
    k = 0
    for _ in range(n_rows):
        cells = []
        for _ in range(n_cols):
            word = words[k % len(words)]
            k += 1
            cells.append(f"<td><a href=\"#{word.lower()}\">{word}</a></td>")
        parts.append("<tr>" + "".join(cells) + "</tr>")
    parts.append("</table>")
    return "".join(parts)


def _image_grid(rng: random.Random) -> str:
    n_cols = rng.randint(2, 4)
    n_rows = rng.randint(2, 4)
    parts = ["<table>"]
    for i in range(n_rows):
        cells = []
        for j in range(n_cols):
            cell = f"<img src=\"#thumb{i}{j}\">"
            if rng.random() < 0.4:
                cell += f"<a href=\"#g{i}{j}\">{rng.choice(_WORDS)}</a>"
            cells.append(f"<td>{cell}</td>")
        parts.append("<tr>" + "".join(cells) + "</tr>")
    parts.append("</table>")
    return "".join(parts)


def _nesting_shell(rng: random.Random) -> str:
    # Two-column page scaffold: a nav rail next to nested content blocks.
    n_rows = rng.randint(2, 3)
    prose = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(20, 40)))
    parts = ["<table>"]
    for i in range(n_rows):
        nav = "".join(
            f"<a href=\"#{w.lower()}\">{w}</a> " for w in rng.sample(_NAV, 3)
        )
        inner = (
            "<table><tr><td>" + rng.choice(_WORDS) + "</td><td>"
            + rng.choice(_WORDS) + "</td></tr></table>"
        )
        content = inner if i % 2 == 0 else prose
        parts.append(f"<tr><td>{nav}</td><td>{content}</td></tr>")
    parts.append("</table>")
    return "".join(parts)


_GENERATORS = {
    "data_grid": _data_grid,
    "attribute_value": _attribute_value,
    "link_bar": _link_bar,
    "image_grid": _image_grid,
    "nesting_shell": _nesting_shell,
}


def generate_table(kind: str, rng: random.Random) -> str:
    if kind not in _GENERATORS:
        raise DataError(f"unknown synthetic table kind {kind!r}")
    return _GENERATORS[kind](rng)


def generate_corpus(
    n_genuine: int, n_layout: int, out_dir, seed: int = 0,
    extra_metadata: dict | None = None,
) -> DatasetManifest:
    """Write n_genuine + n_layout HTML tables plus dataset.jsonl into
    out_dir; returns the manifest. Archetypes alternate round-robin
    within each label so any slice stays mixed."""
    if n_genuine < 0 or n_layout < 0:
        raise DataError("table counts must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for label, kinds, count in (
        ("genuine", GENUINE_KINDS, n_genuine),
        ("layout", LAYOUT_KINDS, n_layout),
    ):
        for i in range(count):
            kind = kinds[i % len(kinds)]
            rng = random.Random(f"{seed}|{label}|{i}")
            html = generate_table(kind, rng)
            grid = parse_table(html)
            example_id = f"synth-{label}-{i:04d}"
            html_path = out_dir / f"{example_id}.html"
            html_path.write_text(html)
            entries.append(
                LabeledExample(
                    id=example_id,
                    source_url=f"synthetic:{kind}/{i}",
                    html_path=html_path.name,
                    label=label,
                    rows=grid.n_rows,
                    cols=grid.n_cols,
                )
            )
    manifest = DatasetManifest(
        entries=entries, metadata={"seed": seed, **(extra_metadata or {})}
    )
    manifest.validate()
    write_manifest(manifest, out_dir / "dataset.jsonl")
    return manifest
