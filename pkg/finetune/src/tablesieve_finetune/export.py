"""Serialize trained torch models into the pipeline's exchange format.

Two files per model: the network as an ``.npz`` archive (a ``__graph__``
JSON entry plus named weight arrays, NCHW, fixed zip metadata so equal
models give equal bytes) and a ``model.json`` manifest naming the input,
the per-block GAP tap tensors, the top tensor, the sigmoid head output,
and the preprocessing constants used in training.

The trace is explicit per architecture rather than generic: VGG16 is a
flat conv/relu/pool chain, ResNet50 is a stem plus four bottleneck
stages. Head standardization constants are folded into the exported
dense weights (w' = w/sd, b' = b - sum(w*mu/sd)), so the graph needs no
extra ops. Injection models export the backbone only; their head and
the standardization constants ride in the manifest, since the graph
format takes a single image input.

Every export ends with a self check: the written file is executed by a
small numpy interpreter and compared against the torch model on the
same input. A mismatch raises instead of leaving a bad model on disk.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .data import PREPROCESSING, preprocessing_id
from .errors import ExportError
from .models import TableClassifier

GRAPH_KEY = "__graph__"
FORMAT_NAME = "nngraph"
FORMAT_VERSION = 1
MANIFEST_FORMAT = "tablesieve-model"
MANIFEST_VERSION = 1

INPUT_NAME = "input"
INPUT_SHAPE = [1, 3, 224, 224]
SELF_CHECK_TOL = 1e-5


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


class _Tracer:
    """Accumulates nodes and weights while walking a torch module."""

    def __init__(self):
        self.nodes: list[dict] = []
        self.weights: dict[str, np.ndarray] = {}
        self._count = 0

    def _name(self, name: str | None) -> str:
        if name is not None:
            return name
        self._count += 1
        return f"t{self._count}"

    def weight(self, name: str, tensor) -> str:
        if name in self.weights:
            raise ExportError(f"duplicate weight name {name!r}")
        array = tensor.detach().cpu().numpy() if torch.is_tensor(tensor) else tensor
        self.weights[name] = np.ascontiguousarray(array, dtype=np.float32)
        return name

    def emit(self, op: str, inputs: list[str], attrs=None, name=None) -> str:
        out = self._name(name)
        self.nodes.append(
            {"op": op, "inputs": list(inputs), "outputs": [out], "attrs": attrs or {}}
        )
        return out

    def conv(self, wname: str, x: str, mod: torch.nn.Conv2d, name=None) -> str:
        if _pair(mod.dilation) != (1, 1) or mod.groups != 1:
            raise ExportError(f"{wname}: dilated or grouped convolutions not supported")
        inputs = [x, self.weight(f"{wname}_w", mod.weight)]
        if mod.bias is not None:
            inputs.append(self.weight(f"{wname}_b", mod.bias))
        ph, pw = _pair(mod.padding)
        attrs = {"strides": list(_pair(mod.stride)), "pads": [ph, pw, ph, pw]}
        return self.emit("Conv", inputs, attrs, name)

    def batchnorm(self, wname: str, x: str, mod: torch.nn.BatchNorm2d, name=None) -> str:
        inputs = [
            x,
            self.weight(f"{wname}_scale", mod.weight),
            self.weight(f"{wname}_bias", mod.bias),
            self.weight(f"{wname}_mean", mod.running_mean),
            self.weight(f"{wname}_var", mod.running_var),
        ]
        return self.emit(
            "BatchNormalization", inputs, {"epsilon": float(mod.eps)}, name
        )

    def maxpool(self, x: str, mod: torch.nn.MaxPool2d, name=None) -> str:
        if mod.ceil_mode or _pair(mod.dilation) != (1, 1):
            raise ExportError("ceil-mode or dilated pooling not supported")
        kh, kw = _pair(mod.kernel_size)
        sh, sw = _pair(mod.stride if mod.stride is not None else mod.kernel_size)
        ph, pw = _pair(mod.padding)
        attrs = {
            "kernel_shape": [kh, kw],
            "strides": [sh, sw],
            "pads": [ph, pw, ph, pw],
        }
        return self.emit("MaxPool", [x], attrs, name)


def _trace_vgg16(tracer: _Tracer, backbone: torch.nn.Module):
    """Conv/relu/pool chain; each pool output is a tap, block1..block5."""
    current = INPUT_NAME
    block = 0
    conv = 0
    channels = 3
    taps = []
    for mod in backbone:
        if isinstance(mod, torch.nn.Conv2d):
            conv += 1
            channels = mod.out_channels
            current = tracer.conv(f"conv{conv}", current, mod)
        elif isinstance(mod, torch.nn.ReLU):
            current = tracer.emit("Relu", [current])
        elif isinstance(mod, torch.nn.MaxPool2d):
            block += 1
            current = tracer.maxpool(current, mod, name=f"block{block}")
            taps.append((f"block{block}", channels))
        else:
            raise ExportError(f"unexpected vgg16 layer {type(mod).__name__}")
    if [ch for _, ch in taps] != [64, 128, 256, 512, 512]:
        raise ExportError(f"vgg16 trace produced unexpected taps {taps}")
    return taps, taps[-1]


def _trace_resnet50(tracer: _Tracer, backbone: torch.nn.Module):
    """Stem then four bottleneck stages; stem and stage outputs are the
    taps, block1..block5."""
    mods = list(backbone)
    if len(mods) != 8:
        raise ExportError(f"resnet50 backbone has {len(mods)} top-level modules, expected 8")
    conv1, bn1, _relu, maxpool = mods[:4]
    cur = tracer.conv("stem_conv", INPUT_NAME, conv1)
    cur = tracer.batchnorm("stem_bn", cur, bn1)
    cur = tracer.emit("Relu", [cur])
    cur = tracer.maxpool(cur, maxpool, name="block1")
    taps = [("block1", bn1.num_features)]
    for stage_i, stage in enumerate(mods[4:], start=2):
        blocks = list(stage)
        for block_i, bottleneck in enumerate(blocks):
            prefix = f"s{stage_i - 1}b{block_i}"
            shortcut = cur
            out = tracer.conv(f"{prefix}_conv1", cur, bottleneck.conv1)
            out = tracer.batchnorm(f"{prefix}_bn1", out, bottleneck.bn1)
            out = tracer.emit("Relu", [out])
            out = tracer.conv(f"{prefix}_conv2", out, bottleneck.conv2)
            out = tracer.batchnorm(f"{prefix}_bn2", out, bottleneck.bn2)
            out = tracer.emit("Relu", [out])
            out = tracer.conv(f"{prefix}_conv3", out, bottleneck.conv3)
            out = tracer.batchnorm(f"{prefix}_bn3", out, bottleneck.bn3)
            if bottleneck.downsample is not None:
                ds_conv, ds_bn = bottleneck.downsample
                shortcut = tracer.conv(f"{prefix}_down", shortcut, ds_conv)
                shortcut = tracer.batchnorm(f"{prefix}_down_bn", shortcut, ds_bn)
            summed = tracer.emit("Add", [out, shortcut])
            last = block_i == len(blocks) - 1
            cur = tracer.emit("Relu", [summed], name=f"block{stage_i}" if last else None)
        taps.append((f"block{stage_i}", blocks[-1].bn3.num_features))
    if [ch for _, ch in taps] != [64, 256, 512, 1024, 2048]:
        raise ExportError(f"resnet50 trace produced unexpected taps {taps}")
    return taps, taps[-1]


_TRACERS = {"vgg16": _trace_vgg16, "resnet50": _trace_resnet50}


def _folded_head(model: TableClassifier) -> tuple[np.ndarray, np.ndarray]:
    """Head weights with feature standardization folded in, so the graph
    applies them to raw GAP vectors."""
    w = model.head.weight.detach().cpu().numpy().astype(np.float64)  # (1, C)
    b = model.head.bias.detach().cpu().numpy().astype(np.float64)  # (1,)
    mu = model.feat_mean.cpu().numpy().astype(np.float64)
    sd = model.feat_std.cpu().numpy().astype(np.float64)
    w_folded = (w / sd).T  # (C, 1), Gemm computes x @ w + b
    b_folded = b - (w * (mu / sd)).sum()
    return w_folded.astype(np.float32), b_folded.astype(np.float32)


def _emit_head(tracer: _Tracer, model: TableClassifier, top_name: str) -> str:
    w_folded, b_folded = _folded_head(model)
    tracer.weight("head_w", w_folded)
    tracer.weight("head_b", b_folded)
    gap = tracer.emit("GlobalAveragePool", [top_name], name="gap")
    flat = tracer.emit("Flatten", [gap], name="feat")
    logit = tracer.emit("Gemm", [flat, "head_w", "head_b"], name="logit")
    return tracer.emit("Sigmoid", [logit], name="prob")


def _graph_json(output_names: list[str], nodes: list[dict]) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "inputs": [{"name": INPUT_NAME, "shape": INPUT_SHAPE}],
        "outputs": output_names,
        "nodes": nodes,
    }
    return json.dumps(doc, sort_keys=True)


def _write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """npz with fixed entry order and zip timestamps: equal content,
    equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def _injection_head_doc(model: TableClassifier) -> dict:
    return {
        "html_feature_dim": model.spec.html_feature_dim,
        "weight": model.head.weight.detach().cpu().numpy().tolist(),
        "bias": model.head.bias.detach().cpu().numpy().tolist(),
        "feat_mean": model.feat_mean.cpu().numpy().tolist(),
        "feat_std": model.feat_std.cpu().numpy().tolist(),
        "html_mean": model.html_mean.cpu().numpy().tolist(),
        "html_std": model.html_std.cpu().numpy().tolist(),
    }


def export(model: TableClassifier, out_dir) -> Path:
    """Write <backbone>-<mode>.nngraph.npz + model.json into out_dir and
    self-check the written files; returns the manifest path."""
    spec = model.spec
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()

    tracer = _Tracer()
    taps, top = _TRACERS[spec.backbone](tracer, model.backbone)
    with_head = spec.mode in ("frozen", "adapt")
    if with_head:
        head_output = _emit_head(tracer, model, top[0])
        output_names = [name for name, _ in taps] + [head_output]
    else:
        head_output = None
        output_names = [name for name, _ in taps]

    model_name = f"{spec.backbone}-{spec.mode}.nngraph.npz"
    arrays = dict(tracer.weights)
    arrays[GRAPH_KEY] = np.array(_graph_json(output_names, tracer.nodes))
    model_path = out_dir / model_name
    _write_npz(model_path, arrays)

    manifest_doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "model_path": model_name,
        "backbone": spec.backbone,
        # The runtime's mode vocabulary is frozen/adapt; an injection
        # backbone is frozen, its joint head rides below.
        "mode": "adapt" if spec.mode == "adapt" else "frozen",
        "input_name": INPUT_NAME,
        "input_shape": INPUT_SHAPE,
        "preprocessing": PREPROCESSING,
        "preprocessing_id": preprocessing_id(PREPROCESSING),
        "tap_outputs": [[name, ch] for name, ch in taps],
        "top_output": list(top),
        "head_output": head_output,
    }
    if spec.mode == "injection":
        manifest_doc["injection_head"] = _injection_head_doc(model)
    manifest_path = out_dir / "model.json"
    manifest_path.write_text(json.dumps(manifest_doc, indent=2, sort_keys=True))

    _self_check(model, model_path, manifest_doc)
    return manifest_path


# ---------------------------------------------------------------------------
# Post-export self check: run the written file under a minimal numpy
# interpreter and compare with the torch model.


def _np_conv(x, w, b, attrs):
    sh, sw = attrs.get("strides", [1, 1])
    pt, pl, pb, pr = attrs.get("pads", [0, 0, 0, 0])
    x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h - kh) // sh + 1
    ow = (wd - kw) // sw + 1
    patches = [
        x[:, :, ky : ky + sh * oh : sh, kx : kx + sw * ow : sw].reshape(n, cin, -1)
        for ky in range(kh)
        for kx in range(kw)
    ]
    cols = np.concatenate(patches, axis=1)  # (n, kh*kw*cin, oh*ow)
    w_mat = w.transpose(0, 2, 3, 1).reshape(cout, -1)  # matches (ky, kx, cin)
    out = np.einsum("ok,nkp->nop", w_mat.astype(np.float64), cols)
    out = out.reshape(n, cout, oh, ow)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return out


def _np_maxpool(x, attrs):
    kh, kw = attrs["kernel_shape"]
    sh, sw = attrs.get("strides", [kh, kw])
    pt, pl, pb, pr = attrs.get("pads", [0, 0, 0, 0])
    x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    n, c, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            window = x[:, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
            out[:, :, i, j] = window.max(axis=(2, 3))
    return out


def _np_batchnorm(x, scale, bias, mean, var, attrs):
    eps = attrs.get("epsilon", 1e-5)
    shape = (1, -1, 1, 1)
    std = np.sqrt(var.astype(np.float64).reshape(shape) + eps)
    return (x - mean.reshape(shape)) / std * scale.reshape(shape) + bias.reshape(shape)


def _run_exported(doc: dict, weights: dict, x: np.ndarray) -> dict[str, np.ndarray]:
    vals = dict(weights)
    vals[doc["inputs"][0]["name"]] = x.astype(np.float64)
    for node in doc["nodes"]:
        op = node["op"]
        ins = [vals[name] for name in node["inputs"]]
        attrs = node.get("attrs", {})
        if op == "Conv":
            out = _np_conv(ins[0], ins[1], ins[2] if len(ins) > 2 else None, attrs)
        elif op == "Relu":
            out = np.maximum(ins[0], 0.0)
        elif op == "MaxPool":
            out = _np_maxpool(ins[0], attrs)
        elif op == "BatchNormalization":
            out = _np_batchnorm(*ins, attrs)
        elif op == "Add":
            out = ins[0] + ins[1]
        elif op == "GlobalAveragePool":
            out = ins[0].mean(axis=(2, 3), keepdims=True)
        elif op == "Flatten":
            out = ins[0].reshape(ins[0].shape[0], -1)
        elif op == "Gemm":
            out = ins[0] @ ins[1] + (ins[2] if len(ins) > 2 else 0.0)
        elif op == "Sigmoid":
            out = 1.0 / (1.0 + np.exp(-np.clip(ins[0], -500, 500)))
        else:
            raise ExportError(f"self check cannot run op {op!r}")
        vals[node["outputs"][0]] = out
    return vals


def _self_check(model: TableClassifier, model_path: Path, manifest_doc: dict) -> None:
    archive = np.load(model_path, allow_pickle=False)
    doc = json.loads(str(archive[GRAPH_KEY]))
    weights = {k: archive[k] for k in archive.files if k != GRAPH_KEY}

    rng = np.random.default_rng(0)
    x = rng.uniform(-120.0, 135.0, size=tuple(doc["inputs"][0]["shape"]))
    x = x.astype(np.float32).astype(np.float64)  # both runtimes see equal values
    vals = _run_exported(doc, weights, x)

    for name, channels in manifest_doc["tap_outputs"]:
        got = vals[name].shape[1]
        if got != channels:
            raise ExportError(
                f"exported tap {name} has {got} channels, manifest says {channels}"
            )

    spec = model.spec
    images = torch.from_numpy(x.astype(np.float32))
    with torch.no_grad():
        if spec.mode == "injection":
            html = rng.standard_normal((1, spec.html_feature_dim))
            html = html.astype(np.float32).astype(np.float64)
            want = model.probabilities(images, torch.from_numpy(html.astype(np.float32))).item()
            head = manifest_doc["injection_head"]
            gap = vals[manifest_doc["top_output"][0]].mean(axis=(2, 3))
            z_img = (gap - head["feat_mean"]) / head["feat_std"]
            z_html = (html - head["html_mean"]) / head["html_std"]
            z = np.concatenate([z_img, z_html], axis=1)
            logit = z @ np.asarray(head["weight"]).T + head["bias"]
            clipped = float(np.clip(logit.ravel()[0], -500, 500))
            got = 1.0 / (1.0 + np.exp(-clipped))
        else:
            want = model.probabilities(images).item()
            got = float(vals[manifest_doc["head_output"]].ravel()[0])
    if abs(got - want) > SELF_CHECK_TOL:
        raise ExportError(
            f"export self check failed: exported graph gives {got:.8f}, "
            f"training model gives {want:.8f}"
        )
