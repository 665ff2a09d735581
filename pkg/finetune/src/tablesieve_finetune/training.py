"""Training loops: Adam + binary cross entropy, early stopping on
validation accuracy with best-weight restore.

Frozen and injection modes never update the backbone, so backbone GAP
vectors are computed once per image and the head trains on the cached
features; that turns an epoch into a few dense-layer updates. The
cached train-set features are standardized (mean/variance) before the
head sees them; the constants are folded into the exported head
weights, so the exported network is unaffected. Adapt mode runs full
forward/backward passes.
"""

from __future__ import annotations

import copy

import numpy as np
import torch

from .data import Dataset, image_batch
from .errors import DataError, SpecError
from .models import TableClassifier
from .spec import TrainSpec


def _check_classes(ds: Dataset, name: str) -> None:
    counts = ds.class_counts()
    empty = [lab for lab, n in counts.items() if n == 0]
    if not ds.samples or empty:
        raise DataError(
            f"{name} set must contain both classes, got counts {counts}"
        )


def _batches(n: int, batch_size: int, generator=None):
    order = torch.randperm(n, generator=generator) if generator else torch.arange(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def cache_features(model: TableClassifier, ds: Dataset, batch_size: int):
    """GAP vectors and labels for every sample, backbone in eval mode."""
    model.backbone.eval()
    feats, labels = [], []
    with torch.no_grad():
        for i in range(0, len(ds.samples), batch_size):
            x, y = image_batch(ds.samples[i : i + batch_size])
            feats.append(model.features(x))
            labels.append(y)
    return torch.cat(feats), torch.cat(labels)


def _html_matrix(ds: Dataset, html_features, dim: int) -> torch.Tensor:
    missing = [s.id for s in ds.samples if s.id not in html_features]
    if missing:
        raise DataError(
            f"{len(missing)} samples have no HTML feature row: {missing[:5]}"
        )
    rows = np.stack([html_features[s.id] for s in ds.samples])
    if rows.shape[1] != dim:
        raise DataError(f"HTML features are {rows.shape[1]}-wide, spec says {dim}")
    return torch.from_numpy(rows.astype(np.float32))


def train(
    model: TableClassifier,
    train_ds: Dataset,
    val_ds: Dataset,
    spec: TrainSpec,
    html_features: dict | None = None,
) -> list[dict]:
    """Fit in place; returns the per-epoch history."""
    spec.validate()
    _check_classes(train_ds, "train")
    _check_classes(val_ds, "val")
    if spec.mode == "injection" and html_features is None:
        raise SpecError("injection mode requires html_features")

    torch.manual_seed(spec.seed)
    if spec.mode in ("frozen", "injection"):
        return _train_cached(model, train_ds, val_ds, spec, html_features)
    return _train_full(model, train_ds, val_ds, spec)


def _standardize_from(model: TableClassifier, feats: torch.Tensor) -> None:
    model.feat_mean.copy_(feats.mean(dim=0))
    model.feat_std.copy_(feats.std(dim=0).clamp_min(1e-8))


def _early_stop_loop(spec, run_epoch, evaluate, parameters):
    """Shared epoch loop: maximize validation accuracy with patience."""
    history = []
    best_acc = -1.0
    best_state = None
    stale = 0
    for _ in range(spec.max_epochs):
        loss, acc = run_epoch()
        val_loss, val_acc = evaluate()
        history.append(
            {"loss": loss, "accuracy": acc,
             "val_loss": val_loss, "val_accuracy": val_acc}
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = copy.deepcopy(parameters().state_dict())
            stale = 0
        else:
            stale += 1
            if stale > spec.patience:
                break
    if best_state is not None:
        parameters().load_state_dict(best_state)
    return history


def _accuracy(logits: torch.Tensor, y: torch.Tensor) -> float:
    return ((torch.sigmoid(logits) >= 0.5).float() == y).float().mean().item()


def _train_cached(model, train_ds, val_ds, spec, html_features):
    train_x, train_y = cache_features(model, train_ds, spec.batch_size)
    val_x, val_y = cache_features(model, val_ds, spec.batch_size)
    _standardize_from(model, train_x)

    train_html = val_html = None
    if spec.mode == "injection":
        train_html = _html_matrix(train_ds, html_features, spec.html_feature_dim)
        val_html = _html_matrix(val_ds, html_features, spec.html_feature_dim)
        model.html_mean.copy_(train_html.mean(dim=0))
        model.html_std.copy_(train_html.std(dim=0).clamp_min(1e-8))

    optimizer = torch.optim.Adam(model.head.parameters(), lr=spec.learning_rate)
    loss_fn = torch.nn.BCEWithLogitsLoss()
    generator = torch.Generator().manual_seed(spec.seed)

    def run_epoch():
        losses, hits, seen = [], 0.0, 0
        for idx in _batches(len(train_y), spec.batch_size, generator):
            optimizer.zero_grad()
            html = train_html[idx] if train_html is not None else None
            logits = model.logits(train_x[idx], html)
            loss = loss_fn(logits, train_y[idx])
            loss.backward()
            optimizer.step()
            losses.append(loss.item() * len(idx))
            hits += _accuracy(logits, train_y[idx]) * len(idx)
            seen += len(idx)
        return sum(losses) / seen, hits / seen

    def evaluate():
        with torch.no_grad():
            logits = model.logits(val_x, val_html)
            return loss_fn(logits, val_y).item(), _accuracy(logits, val_y)

    return _early_stop_loop(spec, run_epoch, evaluate, lambda: model.head)


def _train_full(model, train_ds, val_ds, spec):
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    loss_fn = torch.nn.BCEWithLogitsLoss()
    generator = torch.Generator().manual_seed(spec.seed)
    samples = train_ds.samples

    def run_epoch():
        model.train()
        losses, hits, seen = [], 0.0, 0
        for idx in _batches(len(samples), spec.batch_size, generator):
            x, y = image_batch([samples[i] for i in idx.tolist()])
            optimizer.zero_grad()
            logits = model(x)
            loss = loss_fn(logits, y)
            loss.backward()
            optimizer.step()
            losses.append(loss.item() * len(idx))
            hits += _accuracy(logits, y) * len(idx)
            seen += len(idx)
        return sum(losses) / seen, hits / seen

    def evaluate():
        model.eval()
        losses, hits, seen = [], 0.0, 0
        with torch.no_grad():
            for i in range(0, len(val_ds.samples), spec.batch_size):
                x, y = image_batch(val_ds.samples[i : i + spec.batch_size])
                logits = model(x)
                losses.append(loss_fn(logits, y).item() * len(y))
                hits += _accuracy(logits, y) * len(y)
                seen += len(y)
        return sum(losses) / seen, hits / seen

    return _early_stop_loop(spec, run_epoch, evaluate, lambda: model)
