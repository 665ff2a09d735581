"""Random forest and MLP classifiers over table feature vectors.

Both learners are implemented here directly (no external ML toolkit) so
training is bit-reproducible from a seed: forests draw per-tree PRNG
streams, the MLP uses a fixed initialization scheme. Labels are the
strings "layout" and "genuine"; internally genuine=1.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ModelConfigError, TrainingError

FOREST_FORMAT = "tablesieve-forest"
MLP_FORMAT = "tablesieve-mlp"
FORMAT_VERSION = 1


def _encode_labels(labels) -> np.ndarray:
    y = np.empty(len(labels), dtype=np.uint8)
    for i, lab in enumerate(labels):
        if lab == "genuine":
            y[i] = 1
        elif lab == "layout":
            y[i] = 0
        else:
            raise DataError(f"unknown label {lab!r}")
    return y


def _check_matrix(x: np.ndarray) -> None:
    if x.ndim != 2:
        raise DataError("feature matrix must be 2-dimensional")
    bad = np.nonzero(~np.isfinite(x))
    if bad[0].size:
        raise DataError(
            f"non-finite feature value at row {bad[0][0]}, column {bad[1][0]}"
        )


def concat_features(html_vec, visual_vec) -> list[float]:
    """Joint vector: HTML features followed by visual features."""
    out = [float(v) for v in html_vec] + [float(v) for v in visual_vec]
    if not all(math.isfinite(v) for v in out):
        raise DataError("feature vectors must be finite")
    return out


# ---------------------------------------------------------------------------
# Random forest


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    features_per_split: str | int = "sqrt"
    seed: int = 0
    bootstrap: bool = True

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ModelConfigError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ModelConfigError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ModelConfigError("min_samples_leaf must be >= 1")
        if isinstance(self.features_per_split, str):
            if self.features_per_split not in ("sqrt", "all"):
                raise ModelConfigError(
                    "features_per_split must be 'sqrt', 'all', or a positive int"
                )
        elif self.features_per_split < 1:
            raise ModelConfigError("fixed features_per_split must be >= 1")


# Named baseline configurations (seed filled in at train time).
FOREST_PRESETS = {
    "dwtc-original": dict(
        n_trees=10,
        max_depth=None,
        min_samples_leaf=1,
        min_samples_split=2,
        features_per_split="sqrt",
    ),
    "dwtc-retrained": dict(
        n_trees=1600,
        max_depth=80,
        min_samples_leaf=4,
        min_samples_split=2,
        features_per_split="sqrt",
    ),
}


def preset_forest_config(name: str, seed: int = 0) -> ForestConfig:
    if name not in FOREST_PRESETS:
        raise ModelConfigError(
            f"unknown preset {name!r}; choose from {sorted(FOREST_PRESETS)}"
        )
    return ForestConfig(seed=seed, **FOREST_PRESETS[name])


@dataclass
class ForestModel:
    trees: list[dict]
    config: ForestConfig
    n_features: int
    feature_scope: str
    catalogue_version: int
    prior_label: str
    class_counts: dict[str, int]


def gini(counts) -> float:
    """Gini impurity of a class-count pair."""
    total = sum(counts)
    if total == 0:
        return 0.0
    return 1.0 - sum((c / total) ** 2 for c in counts)


def _n_candidate_features(spec_value, n_features: int) -> int:
    if spec_value == "all":
        return n_features
    if spec_value == "sqrt":
        return max(1, int(math.isqrt(n_features)))
    return min(int(spec_value), n_features)


def _best_split(x, y, feature_indices, min_samples_leaf):
    """Lowest weighted-Gini axis split; ties take the lower feature index
    then the lower threshold. Returns (score, feature, threshold) or None."""
    n = len(y)
    best = None
    for fi in feature_indices:
        vals = x[:, fi]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[order]
        boundaries = np.nonzero(sv[1:] != sv[:-1])[0] + 1
        if min_samples_leaf > 1 and boundaries.size:
            keep = (boundaries >= min_samples_leaf) & (
                n - boundaries >= min_samples_leaf
            )
            boundaries = boundaries[keep]
        if not boundaries.size:
            continue
        prefix_g = np.cumsum(sy)
        left_n = boundaries.astype(np.float64)
        left_g = prefix_g[boundaries - 1].astype(np.float64)
        right_n = n - left_n
        right_g = prefix_g[-1] - left_g
        gini_left = 1.0 - (left_g / left_n) ** 2 - ((left_n - left_g) / left_n) ** 2
        gini_right = (
            1.0 - (right_g / right_n) ** 2 - ((right_n - right_g) / right_n) ** 2
        )
        weighted = (left_n * gini_left + right_n * gini_right) / n
        k = int(np.argmin(weighted))  # first minimum: lowest threshold
        if best is None or weighted[k] < best[0]:
            threshold = float((sv[boundaries[k] - 1] + sv[boundaries[k]]) / 2.0)
            best = (float(weighted[k]), int(fi), threshold)
    return best


def _grow_tree(x, y, config: ForestConfig, rng) -> dict:
    n_features = x.shape[1]
    m = _n_candidate_features(config.features_per_split, n_features)

    def leaf(idx) -> dict:
        sub = y[idx]
        n_genuine = int(sub.sum())
        return {"counts": [int(len(sub) - n_genuine), n_genuine]}

    def grow(idx, depth) -> dict:
        sub_y = y[idx]
        if (
            len(idx) < config.min_samples_split
            or (config.max_depth is not None and depth >= config.max_depth)
            or sub_y.min() == sub_y.max()
        ):
            return leaf(idx)
        if m == n_features:
            candidates = np.arange(n_features)
        else:
            candidates = np.sort(rng.choice(n_features, size=m, replace=False))
        found = _best_split(x[idx], sub_y, candidates, config.min_samples_leaf)
        if found is None:
            return leaf(idx)
        _, fi, thr = found
        mask = x[idx, fi] <= thr
        return {
            "feature": fi,
            "threshold": thr,
            "left": grow(idx[mask], depth + 1),
            "right": grow(idx[~mask], depth + 1),
        }

    return grow(np.arange(len(y)), 0)


def rf_train(
    vectors,
    labels,
    config: ForestConfig,
    feature_scope: str = "html",
    catalogue_version: int = 1,
    bootstrap_indices: list | None = None,
) -> ForestModel:
    """Train a random forest. `bootstrap_indices` (one index array per
    tree) substitutes for the internal resampling; it exists so tests can
    drive the trainer against an external reference."""
    config.validate()
    x = np.asarray(vectors, dtype=np.float64)
    _check_matrix(x)
    y = _encode_labels(labels)
    if len(x) != len(y):
        raise DataError("vectors and labels length mismatch")
    if len(x) < 2:
        raise DataError("need at least 2 training examples")
    if y.min() == y.max():
        raise DataError("training data contains a single class; need both")
    n = len(y)
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng((config.seed, t))
        if bootstrap_indices is not None:
            idx = np.asarray(bootstrap_indices[t], dtype=np.intp)
        elif config.bootstrap:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        sample_y = y[idx]
        if sample_y.min() == sample_y.max():
            # Degenerate bootstrap draw: the tree is a prior-returning leaf.
            trees.append(
                {"counts": [int(len(sample_y) - sample_y.sum()), int(sample_y.sum())]}
            )
            continue
        trees.append(_grow_tree(x[idx], sample_y, config, rng))
    n_genuine = int(y.sum())
    n_layout = n - n_genuine
    prior_label = "genuine" if n_genuine >= n_layout else "layout"
    return ForestModel(
        trees=trees,
        config=config,
        n_features=x.shape[1],
        feature_scope=feature_scope,
        catalogue_version=catalogue_version,
        prior_label=prior_label,
        class_counts={"layout": n_layout, "genuine": n_genuine},
    )


def _tree_prob(node: dict, x) -> float:
    while "feature" in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    n_layout, n_genuine = node["counts"]
    total = n_layout + n_genuine
    return n_genuine / total if total else 0.5


def rf_predict(model: ForestModel, x) -> tuple[str, float]:
    """(label, probability_genuine); exact 0.5 falls back to the larger
    training prior recorded in the model."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DataError(
            f"feature dimension mismatch: model expects {model.n_features}, got {x.shape}"
        )
    prob = float(np.mean([_tree_prob(t, x) for t in model.trees]))
    if prob > 0.5:
        label = "genuine"
    elif prob < 0.5:
        label = "layout"
    else:
        label = model.prior_label
    return label, prob


# ---------------------------------------------------------------------------
# MLP


@dataclass(frozen=True)
class MlpConfig:
    hidden_units: int = 64
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.hidden_units < 1:
            raise ModelConfigError("hidden_units must be >= 1")
        if self.learning_rate <= 0:
            raise ModelConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ModelConfigError("batch_size must be >= 1")


@dataclass
class MlpModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    config: MlpConfig
    n_features: int
    feature_scope: str
    catalogue_version: int
    prior_label: str
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _forward(model_params, x):
    w1, b1, w2, b2 = model_params
    h = np.maximum(x @ w1 + b1, 0.0)
    z = (h @ w2 + b2).ravel()
    return h, z


def _bce_from_logits(z, y) -> float:
    # max(z,0) - z*y + log1p(exp(-|z|)): finite for all finite z.
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def mlp_train(
    vectors,
    labels,
    config: MlpConfig,
    val_vectors,
    val_labels,
    feature_scope: str = "joint",
    catalogue_version: int = 1,
) -> MlpModel:
    """One hidden ReLU layer, sigmoid output, BCE loss, Adam updates,
    early stopping on validation loss with best-weights restore."""
    config.validate()
    x = np.asarray(vectors, dtype=np.float64)
    _check_matrix(x)
    y = _encode_labels(labels).astype(np.float64)
    if y.min() == y.max():
        raise DataError("training data contains a single class; need both")
    if len(val_vectors) == 0:
        raise DataError("validation set must be non-empty")
    xv = np.asarray(val_vectors, dtype=np.float64)
    _check_matrix(xv)
    yv = _encode_labels(val_labels).astype(np.float64)

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std
    xvs = (xv - mean) / std

    rng = np.random.default_rng(config.seed)
    d = x.shape[1]
    h = config.hidden_units
    params = [
        _glorot(rng, d, h),
        np.zeros(h),
        _glorot(rng, h, 1),
        np.zeros(1),
    ]
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    best = [p.copy() for p in params]
    best_val = math.inf
    stale = 0
    train_hist: list[float] = []
    val_hist: list[float] = []

    for _ in range(config.max_epochs):
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = xs[batch], y[batch]
            hid, z = _forward(params, xb)
            p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
            dz = (p - yb)[:, None] / len(batch)
            grads = [
                xb.T @ (dz @ params[2].T * (hid > 0)),
                ((dz @ params[2].T) * (hid > 0)).sum(axis=0),
                hid.T @ dz,
                dz.sum(axis=0),
            ]
            step += 1
            for i, g in enumerate(grads):
                adam_m[i] = beta1 * adam_m[i] + (1 - beta1) * g
                adam_v[i] = beta2 * adam_v[i] + (1 - beta2) * g * g
                m_hat = adam_m[i] / (1 - beta1**step)
                v_hat = adam_v[i] / (1 - beta2**step)
                params[i] = params[i] - config.learning_rate * m_hat / (
                    np.sqrt(v_hat) + eps
                )
        _, z_tr = _forward(params, xs)
        _, z_val = _forward(params, xvs)
        tr_loss = _bce_from_logits(z_tr, y)
        val_loss = _bce_from_logits(z_val, yv)
        if not (math.isfinite(tr_loss) and math.isfinite(val_loss)):
            raise TrainingError(
                "training diverged (non-finite loss); try a smaller learning rate"
            )
        train_hist.append(tr_loss)
        val_hist.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    n_genuine = int(y.sum())
    prior_label = "genuine" if n_genuine >= len(y) - n_genuine else "layout"
    return MlpModel(
        w1=best[0],
        b1=best[1],
        w2=best[2],
        b2=best[3],
        mean=mean,
        std=std,
        config=config,
        n_features=d,
        feature_scope=feature_scope,
        catalogue_version=catalogue_version,
        prior_label=prior_label,
        train_loss=train_hist,
        val_loss=val_hist,
    )


def mlp_predict(model: MlpModel, x) -> tuple[str, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DataError(
            f"feature dimension mismatch: model expects {model.n_features}, got {x.shape}"
        )
    xs = (x - model.mean) / model.std
    hid = np.maximum(xs @ model.w1 + model.b1, 0.0)
    z = float((hid @ model.w2 + model.b2)[0])
    p = 1.0 / (1.0 + math.exp(-max(-500.0, min(500.0, z))))
    if p > 0.5:
        label = "genuine"
    elif p < 0.5:
        label = "layout"
    else:
        label = model.prior_label
    return label, p


# ---------------------------------------------------------------------------
# Persistence


def save_model(model, path) -> None:
    path = Path(path)
    if isinstance(model, ForestModel):
        doc = {
            "format": FOREST_FORMAT,
            "version": FORMAT_VERSION,
            "config": asdict(model.config),
            "n_features": model.n_features,
            "feature_scope": model.feature_scope,
            "catalogue_version": model.catalogue_version,
            "prior_label": model.prior_label,
            "class_counts": model.class_counts,
            "trees": model.trees,
        }
        path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))
    elif isinstance(model, MlpModel):
        doc = {
            "format": MLP_FORMAT,
            "version": FORMAT_VERSION,
            "config": asdict(model.config),
            "n_features": model.n_features,
            "feature_scope": model.feature_scope,
            "catalogue_version": model.catalogue_version,
            "prior_label": model.prior_label,
            "weights_file": path.with_suffix(".npz").name,
        }
        path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        np.savez(
            path.with_suffix(".npz"),
            w1=model.w1,
            b1=model.b1,
            w2=model.w2,
            b2=model.b2,
            mean=model.mean,
            std=model.std,
        )
    else:
        raise ModelConfigError(f"cannot save object of type {type(model).__name__}")


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"unreadable model file {path}: {exc}") from exc
    fmt = doc.get("format")
    if fmt not in (FOREST_FORMAT, MLP_FORMAT):
        raise ModelConfigError(f"not a recognized model file: {path}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelConfigError(
            f"model format version {doc.get('version')} unsupported; "
            f"this build reads version {FORMAT_VERSION}"
        )
    if fmt == FOREST_FORMAT:
        return ForestModel(
            trees=doc["trees"],
            config=ForestConfig(**doc["config"]),
            n_features=doc["n_features"],
            feature_scope=doc["feature_scope"],
            catalogue_version=doc["catalogue_version"],
            prior_label=doc["prior_label"],
            class_counts=doc["class_counts"],
        )
    weights = np.load(path.parent / doc["weights_file"])
    return MlpModel(
        w1=weights["w1"],
        b1=weights["b1"],
        w2=weights["w2"],
        b2=weights["b2"],
        mean=weights["mean"],
        std=weights["std"],
        config=MlpConfig(**doc["config"]),
        n_features=doc["n_features"],
        feature_scope=doc["feature_scope"],
        catalogue_version=doc["catalogue_version"],
        prior_label=doc["prior_label"],
    )
