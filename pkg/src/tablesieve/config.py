"""Pipeline configuration: one YAML document of nested key-value
sections supplying defaults for the CLI flags, plus the short config
hash stamped into every artifact a command writes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .errors import UsageError


@dataclass
class PipelineConfig:
    manifest: str | None = None
    image_dir: str | None = None
    model_dir: str | None = None
    feature_dir: str | None = None
    renderer: str | None = None
    render_timeout_secs: float = 30.0
    asset_policy: str = "offline"
    models: dict = field(default_factory=dict)  # name -> model.json path
    presets: dict = field(default_factory=dict)  # name -> classifier overrides
    seed: int = 0

    def validate(self) -> None:
        if self.render_timeout_secs <= 0:
            raise UsageError("render_timeout_secs must be > 0")
        if self.asset_policy not in ("fetch", "offline"):
            raise UsageError(f"unknown asset_policy {self.asset_policy!r}")
        if not isinstance(self.models, dict) or not isinstance(self.presets, dict):
            raise UsageError("models and presets must be mappings")

    def hash(self) -> str:
        """12-hex-digit digest of the effective configuration."""
        canonical = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def model_manifest_path(self, name: str) -> Path:
        """Resolve a model by configured name or by direct path."""
        if name in self.models:
            return Path(self.models[name])
        path = Path(name)
        if path.exists():
            return path
        known = sorted(self.models) or ["<none configured>"]
        raise UsageError(f"unknown model {name!r}; configured models: {known}")


def load_config(path=None) -> PipelineConfig:
    """Read a YAML config file; with no path, return pure defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a mapping at top level")
    known = {f for f in PipelineConfig.__dataclass_fields__}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise UsageError(
            f"config {path} has unknown keys {unknown}; known keys: {sorted(known)}"
        )
    config = PipelineConfig(**doc)
    config.validate()
    return config
