"""Visual classification and GAP feature extraction from exported CNNs.

A model ships as two files: the network itself in the nngraph exchange
format, and a ``model.json`` manifest naming the input, the tap tensors
for all-layer features, the top tensor, the optional sigmoid head, and
the preprocessing constants the network was trained with. Extraction
never needs the training stack; frozen vs adapted models differ only in
which files are loaded.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataError, ModelConfigError
from . import nngraph

MANIFEST_FORMAT = "tablesieve-model"
MANIFEST_VERSION = 1

BACKBONE_TOP_CHANNELS = {"vgg16": 512, "resnet50": 2048}
VGG16_ALL_CHANNELS = 1472


def preprocessing_id(preprocessing: dict) -> str:
    """Stable short id for a set of preprocessing constants."""
    canonical = json.dumps(preprocessing, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


@dataclass
class ModelManifest:
    model_path: Path
    backbone: str
    mode: str
    input_name: str
    input_shape: list[int]
    preprocessing: dict
    tap_outputs: list[tuple[str, int]]
    top_output: tuple[str, int]
    head_output: str | None

    @property
    def preprocessing_id(self) -> str:
        return preprocessing_id(self.preprocessing)

    def tap_channel_sum(self) -> int:
        return sum(ch for _, ch in self.tap_outputs)

    def validate(self) -> None:
        if self.backbone not in BACKBONE_TOP_CHANNELS:
            raise ModelConfigError(f"unknown backbone {self.backbone!r}")
        if self.mode not in ("frozen", "adapt"):
            raise ModelConfigError(f"unknown mode {self.mode!r}")
        expected_top = BACKBONE_TOP_CHANNELS[self.backbone]
        if self.top_output[1] != expected_top:
            raise ModelConfigError(
                f"{self.backbone} top output must have {expected_top} channels, "
                f"manifest says {self.top_output[1]}"
            )
        if self.backbone == "vgg16" and self.tap_channel_sum() != VGG16_ALL_CHANNELS:
            raise ModelConfigError(
                f"vgg16 tap channels must sum to {VGG16_ALL_CHANNELS}, "
                f"manifest sums to {self.tap_channel_sum()}"
            )
        for key in ("channel_order", "means", "scale"):
            if key not in self.preprocessing:
                raise ModelConfigError(f"preprocessing is missing {key!r}")


def save_manifest(manifest: ModelManifest, path) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "model_path": Path(manifest.model_path).name,
        "backbone": manifest.backbone,
        "mode": manifest.mode,
        "input_name": manifest.input_name,
        "input_shape": list(manifest.input_shape),
        "preprocessing": manifest.preprocessing,
        "preprocessing_id": manifest.preprocessing_id,
        "tap_outputs": [[name, ch] for name, ch in manifest.tap_outputs],
        "top_output": list(manifest.top_output),
        "head_output": manifest.head_output,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_manifest(path) -> ModelManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelConfigError(f"cannot read model manifest {path}: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise ModelConfigError(f"{path}: not a model manifest")
    if doc.get("version") != MANIFEST_VERSION:
        raise ModelConfigError(
            f"{path}: manifest version {doc.get('version')}; "
            f"this build reads version {MANIFEST_VERSION}"
        )
    manifest = ModelManifest(
        model_path=path.parent / doc["model_path"],
        backbone=doc["backbone"],
        mode=doc["mode"],
        input_name=doc["input_name"],
        input_shape=list(doc["input_shape"]),
        preprocessing=doc["preprocessing"],
        tap_outputs=[(name, int(ch)) for name, ch in doc["tap_outputs"]],
        top_output=(doc["top_output"][0], int(doc["top_output"][1])),
        head_output=doc.get("head_output"),
    )
    manifest.validate()
    recorded = doc.get("preprocessing_id")
    if recorded is not None and recorded != manifest.preprocessing_id:
        raise ModelConfigError(
            f"{path}: preprocessing_id {recorded} does not match the "
            f"preprocessing block (expected {manifest.preprocessing_id})"
        )
    return manifest


@dataclass(frozen=True)
class VisualFeatureVector:
    values: np.ndarray
    scope: str
    backbone: str
    mode: str

    def __len__(self) -> int:
        return len(self.values)


def global_average_pool(feature_map: np.ndarray) -> np.ndarray:
    """Mean over the spatial grid of an H×W×C map; returns length C."""
    feature_map = np.asarray(feature_map)
    if feature_map.ndim != 3:
        raise DataError(f"expected an H×W×C map, got shape {feature_map.shape}")
    return feature_map.mean(axis=(0, 1))


@lru_cache(maxsize=8)
def _cached_graph(model_path: str) -> nngraph.Graph:
    return nngraph.load_graph(model_path)


def _model_input(manifest: ModelManifest, tensor) -> np.ndarray:
    data = np.asarray(tensor.data, dtype=np.float64)
    if data.shape != (224, 224, 3):
        raise ModelConfigError(f"tensor shape {data.shape} is not 224x224x3")
    shape = list(manifest.input_shape)
    if shape == [1, 3, 224, 224]:
        return data.transpose(2, 0, 1)[None, ...]
    if shape == [1, 224, 224, 3]:
        return data[None, ...]
    raise ModelConfigError(f"unsupported manifest input_shape {shape}")


def _check_tensor(manifest: ModelManifest, tensor) -> None:
    if tensor.preprocessing_id != manifest.preprocessing_id:
        raise ModelConfigError(
            "tensor was preprocessed with constants "
            f"{tensor.preprocessing_id}, model expects {manifest.preprocessing_id}"
        )


def _gap_output(array: np.ndarray) -> np.ndarray:
    if array.ndim == 4:  # NCHW feature map
        return array.mean(axis=(2, 3))[0]
    if array.ndim == 2:  # already pooled (N, C)
        return array[0]
    raise ModelConfigError(f"unexpected output rank {array.ndim}")


def extract_top(tensor, manifest: ModelManifest) -> VisualFeatureVector:
    """GAP vector of the top convolutional output (512 / 2048 channels)."""
    _check_tensor(manifest, tensor)
    graph = _cached_graph(str(manifest.model_path))
    name, channels = manifest.top_output
    out = nngraph.run_graph(graph, _model_input(manifest, tensor), [name])[name]
    vec = _gap_output(out)
    if vec.shape != (channels,):
        raise ModelConfigError(
            f"top output {name} produced {vec.shape[0]} channels, "
            f"manifest promises {channels}"
        )
    return VisualFeatureVector(
        values=vec, scope="top", backbone=manifest.backbone, mode=manifest.mode
    )


def extract_all(tensor, manifest: ModelManifest) -> VisualFeatureVector:
    """Concatenated GAP vectors of every tap output, manifest order."""
    _check_tensor(manifest, tensor)
    if not manifest.tap_outputs:
        raise ModelConfigError("manifest has no tap_outputs for all-layer extraction")
    graph = _cached_graph(str(manifest.model_path))
    names = [name for name, _ in manifest.tap_outputs]
    outs = nngraph.run_graph(graph, _model_input(manifest, tensor), names)
    parts = []
    for name, channels in manifest.tap_outputs:
        vec = _gap_output(outs[name])
        if vec.shape != (channels,):
            raise ModelConfigError(
                f"tap {name} produced {vec.shape[0]} channels, "
                f"manifest promises {channels}"
            )
        parts.append(vec)
    return VisualFeatureVector(
        values=np.concatenate(parts),
        scope="all",
        backbone=manifest.backbone,
        mode=manifest.mode,
    )


def classify_visual(tensor, manifest: ModelManifest) -> tuple[float, str]:
    """(probability_genuine, label); label is genuine when p >= 0.5."""
    _check_tensor(manifest, tensor)
    if not manifest.head_output:
        raise ModelConfigError("manifest has no head_output; model cannot classify")
    graph = _cached_graph(str(manifest.model_path))
    out = nngraph.run_graph(
        graph, _model_input(manifest, tensor), [manifest.head_output]
    )[manifest.head_output]
    prob = float(np.ravel(out)[0])
    label = "genuine" if prob >= 0.5 else "layout"
    return prob, label


def visual_feature_names(manifest: ModelManifest, scope: str) -> list[str]:
    if scope == "top":
        name, channels = manifest.top_output
        return [f"{manifest.backbone}_top_{i:04d}" for i in range(channels)]
    names = []
    for tap, channels in manifest.tap_outputs:
        names.extend(f"{manifest.backbone}_{tap}_{i:04d}" for i in range(channels))
    return names


def write_visual_csv(path, names, ids, vectors, labels, header_comments=()) -> None:
    """Same shape as the HTML feature export: id, label, feature columns."""
    with open(path, "w", newline="") as f:
        for line in header_comments:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(["id", "label", *names])
        for id_, vec, label in zip(ids, vectors, labels):
            writer.writerow([id_, label, *[repr(float(v)) for v in vec]])
