"""Small fixed test networks in the exchange format.

These stubs have the same output contract as the real backbones (tap
channel counts, top width, sigmoid head) but shrink the spatial work to
one aggressive average-pool followed by 1x1 convolutions, so a full
extraction runs in milliseconds. Weights are seeded random; an optional
constant-probability head turns the model into a fixed-output fixture.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import ModelConfigError
from .nngraph import Graph, Node, save_graph
from .visual_features import ModelManifest, save_manifest

STUB_CHANNELS = {
    "vgg16": [64, 128, 256, 512, 512],
    "resnet50": [64, 256, 512, 1024, 2048],
}

# Preprocessing constants for the stubs: identity scaling, RGB order.
STUB_PREPROCESSING = {"channel_order": "rgb", "means": [0.0, 0.0, 0.0], "scale": 1.0 / 255.0}


def build_stub_model(
    backbone: str,
    out_dir,
    seed: int = 0,
    constant_head_prob: float | None = None,
) -> Path:
    """Write model.nngraph.npz + model.json into out_dir; returns the
    manifest path. `constant_head_prob` zeroes the head weights and sets
    its bias so the classifier always reports that probability."""
    if backbone not in STUB_CHANNELS:
        raise ModelConfigError(f"unknown backbone {backbone!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = STUB_CHANNELS[backbone]
    rng = np.random.default_rng(seed)

    weights: dict[str, np.ndarray] = {}
    nodes = [
        Node(
            op="AveragePool",
            inputs=["input"],
            outputs=["pooled"],
            attrs={"kernel_shape": [32, 32], "strides": [32, 32]},
        )
    ]
    prev_name, prev_ch = "pooled", 3
    taps = []
    for i, ch in enumerate(channels, start=1):
        w = rng.normal(0.0, math.sqrt(2.0 / prev_ch), size=(ch, prev_ch, 1, 1))
        b = np.zeros(ch, dtype=np.float32)
        weights[f"w{i}"] = w.astype(np.float32)
        weights[f"b{i}"] = b
        nodes.append(
            Node(op="Conv", inputs=[prev_name, f"w{i}", f"b{i}"], outputs=[f"conv{i}"])
        )
        tap = f"block{i}"
        nodes.append(Node(op="Relu", inputs=[f"conv{i}"], outputs=[tap]))
        taps.append((tap, ch))
        prev_name, prev_ch = tap, ch

    top_name = taps[-1][0]
    if constant_head_prob is None:
        head_w = rng.normal(0.0, 0.01, size=(prev_ch, 1)).astype(np.float32)
        head_b = np.zeros(1, dtype=np.float32)
    else:
        if not 0.0 < constant_head_prob < 1.0:
            raise ModelConfigError("constant_head_prob must be in (0, 1)")
        head_w = np.zeros((prev_ch, 1), dtype=np.float32)
        head_b = np.array(
            [math.log(constant_head_prob / (1.0 - constant_head_prob))],
            dtype=np.float32,
        )
    weights["head_w"] = head_w
    weights["head_b"] = head_b
    nodes.extend(
        [
            Node(op="GlobalAveragePool", inputs=[top_name], outputs=["gap"]),
            Node(op="Flatten", inputs=["gap"], outputs=["feat"]),
            Node(op="Gemm", inputs=["feat", "head_w", "head_b"], outputs=["logit"]),
            Node(op="Sigmoid", inputs=["logit"], outputs=["prob"]),
        ]
    )

    graph = Graph(
        input_name="input",
        input_shape=[1, 3, 224, 224],
        output_names=[tap for tap, _ in taps] + ["prob"],
        nodes=nodes,
        weights=weights,
    )
    model_path = out_dir / "model.nngraph.npz"
    save_graph(graph, model_path)
    manifest = ModelManifest(
        model_path=model_path,
        backbone=backbone,
        mode="frozen",
        input_name="input",
        input_shape=[1, 3, 224, 224],
        preprocessing=dict(STUB_PREPROCESSING),
        tap_outputs=taps,
        top_output=taps[-1],
        head_output="prob",
    )
    manifest_path = out_dir / "model.json"
    save_manifest(manifest, manifest_path)
    return manifest_path
