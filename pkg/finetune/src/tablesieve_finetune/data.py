"""Read the pipeline's dataset.jsonl + image directory into tensors.

The manifest format, the 224x224 squash, and the preprocessing recipe
(channel order, per-channel means, scalar scale) are the documented
exchange contract of the classification pipeline; this module
implements the same math independently so training-side tensors agree
with pipeline-side preprocessing to float precision.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import DataError

LABELS = ("layout", "genuine")

# Constants used for every training run: BGR order with per-channel
# means on the 0..255 scale, no rescaling. Exported verbatim into the
# model manifest.
PREPROCESSING = {
    "channel_order": "bgr",
    "means": [103.939, 116.779, 123.68],
    "scale": 1.0,
}


def preprocessing_id(preprocessing: dict) -> str:
    canonical = json.dumps(preprocessing, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


@dataclass
class Sample:
    id: str
    image_path: Path
    label: str
    split: str


@dataclass
class Dataset:
    samples: list[Sample]
    metadata: dict

    def split(self, tag: str) -> "Dataset":
        return Dataset(
            samples=[s for s in self.samples if s.split == tag],
            metadata=self.metadata,
        )

    def class_counts(self) -> dict[str, int]:
        counts = {lab: 0 for lab in LABELS}
        for s in self.samples:
            counts[s.label] += 1
        return counts


def read_dataset(manifest_path, image_dir=None) -> Dataset:
    """Parse dataset.jsonl; entries without an image or label are
    rejected, since both are required for supervised fine-tuning."""
    manifest_path = Path(manifest_path)
    try:
        lines = manifest_path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not lines:
        raise DataError(f"manifest {manifest_path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} header is not JSON: {exc}") from exc
    if "schema_version" not in header:
        raise DataError(f"manifest {manifest_path} has no schema_version header")

    # The pipeline records image_dir exactly as it was given on the
    # command line, so a relative value is relative to the cwd.
    if image_dir:
        base = Path(image_dir)
    elif header.get("image_dir"):
        base = Path(header["image_dir"])
    else:
        base = manifest_path.parent

    samples = []
    problems = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        entry = json.loads(line)
        if entry.get("label") not in LABELS:
            problems.append(f"{entry.get('id', f'line {i}')}: label {entry.get('label')!r}")
            continue
        if not entry.get("image_path"):
            problems.append(f"{entry['id']}: no image_path (render the corpus first)")
            continue
        samples.append(
            Sample(
                id=entry["id"],
                image_path=base / entry["image_path"],
                label=entry["label"],
                split=entry.get("split", "unsplit"),
            )
        )
    if problems:
        shown = "; ".join(problems[:5])
        raise DataError(f"{len(problems)} unusable manifest entries: {shown}")
    if not samples:
        raise DataError(f"manifest {manifest_path} has no usable entries")
    return Dataset(samples=samples, metadata=header)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Squash to out_h x out_w, sampling at half-pixel centers with
    edge clamping (the pipeline's resize semantics)."""
    h, w = img.shape[:2]
    src_y = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    src_x = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y_lo = np.floor(src_y)
    x_lo = np.floor(src_x)
    wy = (src_y - y_lo)[:, None, None]
    wx = (src_x - x_lo)[None, :, None]
    y0 = np.clip(y_lo, 0, h - 1).astype(int)
    y1 = np.clip(y_lo + 1, 0, h - 1).astype(int)
    x0 = np.clip(x_lo, 0, w - 1).astype(int)
    x1 = np.clip(x_lo + 1, 0, w - 1).astype(int)
    img = img.astype(np.float64)
    row0 = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    row1 = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return row0 * (1 - wy) + row1 * wy


def preprocess_image(path) -> np.ndarray:
    """Decode to a 224x224x3 float64 array under PREPROCESSING."""
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    data = resize_bilinear(rgb, 224, 224)
    if PREPROCESSING["channel_order"] == "bgr":
        data = data[:, :, ::-1]
    data = (data - np.asarray(PREPROCESSING["means"])) * PREPROCESSING["scale"]
    return data


def image_batch(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack samples into a float32 NCHW batch plus 0/1 label vector."""
    arrays = [preprocess_image(s.image_path).transpose(2, 0, 1) for s in samples]
    x = torch.from_numpy(np.stack(arrays).astype(np.float32))
    y = torch.tensor([1.0 if s.label == "genuine" else 0.0 for s in samples])
    return x, y


def read_html_features(path, expected_dim=None) -> dict[str, np.ndarray]:
    """Feature CSV (id,label,columns...) -> id -> float vector."""
    import csv

    path = Path(path)
    try:
        with open(path) as f:
            rows = list(csv.reader(line for line in f if not line.startswith("#")))
    except OSError as exc:
        raise DataError(f"cannot read features {path}: {exc}") from exc
    if not rows or rows[0][:2] != ["id", "label"]:
        raise DataError(f"{path} is not a feature CSV (want an id,label,... header)")
    dim = len(rows[0]) - 2
    if expected_dim is not None and dim != expected_dim:
        raise DataError(f"{path} has {dim} feature columns, expected {expected_dim}")
    return {row[0]: np.array([float(v) for v in row[2:]]) for row in rows[1:]}
