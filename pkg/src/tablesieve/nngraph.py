"""Self-contained neural network exchange format and numpy executor.

A model is one ``.npz`` file: a ``__graph__`` entry holds the JSON graph
(inputs, outputs, node list), every other entry is a named weight
array. Tensors are NCHW. The node list is stored in topological order;
execution prunes to the ancestors of the requested outputs, so reading
an intermediate tap does not run the layers above it.

Supported ops: Conv, Relu, MaxPool, AveragePool, GlobalAveragePool,
Gemm, Add, Concat, Flatten, Sigmoid, BatchNormalization (inference
form), Identity. This covers VGG16- and ResNet50-style backbones plus
the one-node sigmoid classification head.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelConfigError

GRAPH_KEY = "__graph__"
FORMAT_NAME = "nngraph"
FORMAT_VERSION = 1


@dataclass
class Node:
    op: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict = field(default_factory=dict)


@dataclass
class Graph:
    input_name: str
    input_shape: list[int]
    output_names: list[str]
    nodes: list[Node]
    weights: dict[str, np.ndarray]

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "inputs": [{"name": self.input_name, "shape": self.input_shape}],
            "outputs": self.output_names,
            "nodes": [
                {
                    "op": n.op,
                    "inputs": n.inputs,
                    "outputs": n.outputs,
                    "attrs": n.attrs,
                }
                for n in self.nodes
            ],
        }
        return json.dumps(doc, sort_keys=True)


def save_graph(graph: Graph, path) -> None:
    """Write the model as an npz archive with fixed zip metadata, so the
    same graph and weights always produce the same bytes."""
    arrays = dict(graph.weights)
    arrays[GRAPH_KEY] = np.array(graph.to_json())
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_graph(path) -> Graph:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ModelConfigError(f"cannot read model file {path}: {exc}") from exc
    if GRAPH_KEY not in archive:
        raise ModelConfigError(f"{path} is not a model file (no graph entry)")
    doc = json.loads(str(archive[GRAPH_KEY]))
    if doc.get("format") != FORMAT_NAME:
        raise ModelConfigError(f"{path}: unknown model format {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelConfigError(
            f"{path}: model format version {doc.get('version')}; "
            f"this build reads version {FORMAT_VERSION}"
        )
    nodes = [
        Node(op=n["op"], inputs=n["inputs"], outputs=n["outputs"],
             attrs=n.get("attrs", {}))
        for n in doc["nodes"]
    ]
    weights = {k: archive[k] for k in archive.files if k != GRAPH_KEY}
    spec_in = doc["inputs"][0]
    return Graph(
        input_name=spec_in["name"],
        input_shape=list(spec_in["shape"]),
        output_names=list(doc["outputs"]),
        nodes=nodes,
        weights=weights,
    )


# ---------------------------------------------------------------------------
# Operator kernels (NCHW)


def _pad_nchw(x, pads, value=0.0):
    pt, pl, pb, pr = pads
    if pt == pl == pb == pr == 0:
        return x
    return np.pad(
        x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=value
    )


def _conv(x, w, b, attrs):
    sh, sw = attrs.get("strides", [1, 1])
    pads = attrs.get("pads", [0, 0, 0, 0])
    n, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ModelConfigError(
            f"Conv channel mismatch: input {cin}, weight expects {cin_w}"
        )
    x = _pad_nchw(x, pads)
    h_p, w_p = x.shape[2], x.shape[3]
    oh = (h_p - kh) // sh + 1
    ow = (w_p - kw) // sw + 1
    if kh == kw == 1 and sh == sw == 1:
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1]))  # (cout,n,h,w)
        out = out.transpose(1, 0, 2, 3)
    else:
        cols = np.empty((n, cin * kh * kw, oh * ow), dtype=x.dtype)
        idx = 0
        for dy in range(kh):
            for dx in range(kw):
                patch = x[:, :, dy : dy + sh * oh : sh, dx : dx + sw * ow : sw]
                cols[:, idx * cin : (idx + 1) * cin, :] = patch.reshape(n, cin, -1)
                idx += 1
        w_mat = w.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
        out = np.einsum("nkp,kc->ncp", cols, w_mat).reshape(n, cout, oh, ow)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return out


def _pool(x, attrs, reduce_fn, pad_value):
    kh, kw = attrs["kernel_shape"]
    sh, sw = attrs.get("strides", [kh, kw])
    pads = attrs.get("pads", [0, 0, 0, 0])
    x = _pad_nchw(x, pads, value=pad_value)
    n, c, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            window = x[:, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
            out[:, :, i, j] = reduce_fn(window, axis=(2, 3))
    return out


_KERNELS = {}


def _kernel(name):
    def register(fn):
        _KERNELS[name] = fn
        return fn

    return register


@_kernel("Conv")
def _op_conv(vals, node):
    x = vals[node.inputs[0]]
    w = vals[node.inputs[1]]
    b = vals[node.inputs[2]] if len(node.inputs) > 2 else None
    return _conv(x, w, b, node.attrs)


@_kernel("Relu")
def _op_relu(vals, node):
    return np.maximum(vals[node.inputs[0]], 0.0)


@_kernel("MaxPool")
def _op_maxpool(vals, node):
    return _pool(vals[node.inputs[0]], node.attrs, np.max, -np.inf)


@_kernel("AveragePool")
def _op_avgpool(vals, node):
    return _pool(vals[node.inputs[0]], node.attrs, np.mean, 0.0)


@_kernel("GlobalAveragePool")
def _op_gap(vals, node):
    x = vals[node.inputs[0]]
    return x.mean(axis=(2, 3), keepdims=True)


@_kernel("Gemm")
def _op_gemm(vals, node):
    x = vals[node.inputs[0]]
    w = vals[node.inputs[1]]
    b = vals[node.inputs[2]] if len(node.inputs) > 2 else None
    if node.attrs.get("transB", 0):
        w = w.T
    out = x @ w
    if b is not None:
        out = out + b
    return out


@_kernel("Add")
def _op_add(vals, node):
    return vals[node.inputs[0]] + vals[node.inputs[1]]


@_kernel("Concat")
def _op_concat(vals, node):
    axis = node.attrs.get("axis", 1)
    return np.concatenate([vals[name] for name in node.inputs], axis=axis)


@_kernel("Flatten")
def _op_flatten(vals, node):
    x = vals[node.inputs[0]]
    return x.reshape(x.shape[0], -1)


@_kernel("Sigmoid")
def _op_sigmoid(vals, node):
    x = vals[node.inputs[0]]
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


@_kernel("BatchNormalization")
def _op_batchnorm(vals, node):
    x, scale, bias, mean, var = (vals[name] for name in node.inputs)
    eps = node.attrs.get("epsilon", 1e-5)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps) * scale.reshape(
        shape
    ) + bias.reshape(shape)


@_kernel("Identity")
def _op_identity(vals, node):
    return vals[node.inputs[0]]


def _prune(graph: Graph, wanted: set[str]) -> list[Node]:
    """Nodes needed (in order) to produce every name in `wanted`."""
    needed = set(wanted)
    keep_reversed = []
    for node in reversed(graph.nodes):
        if needed & set(node.outputs):
            keep_reversed.append(node)
            needed.update(node.inputs)
    return keep_reversed[::-1]


def run_graph(graph: Graph, x: np.ndarray, outputs: list[str]) -> dict[str, np.ndarray]:
    """Execute the graph on one input tensor; returns {name: array}."""
    expect = tuple(graph.input_shape)
    if tuple(x.shape) != expect:
        raise ModelConfigError(
            f"input shape mismatch: model expects {expect}, got {tuple(x.shape)}"
        )
    known = set(graph.weights) | {graph.input_name}
    for node in graph.nodes:
        known.update(node.outputs)
    missing = [name for name in outputs if name not in known]
    if missing:
        raise ModelConfigError(f"requested unknown tensors: {missing}")
    vals: dict[str, np.ndarray] = dict(graph.weights)
    vals[graph.input_name] = x.astype(np.float64)
    for node in _prune(graph, set(outputs)):
        kernel = _KERNELS.get(node.op)
        if kernel is None:
            raise ModelConfigError(f"unsupported op {node.op!r}")
        result = kernel(vals, node)
        vals[node.outputs[0]] = result
    return {name: vals[name] for name in outputs}
