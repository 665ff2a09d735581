"""Training specifications with the published settings as defaults."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SpecError

BACKBONES = ("vgg16", "resnet50")
MODES = ("frozen", "adapt", "injection")

# Per-mode optimizer settings. Injection keeps the backbone frozen and
# trains only the joint head, so it follows the frozen settings.
LEARNING_RATES = {"frozen": 1e-3, "adapt": 1e-4, "injection": 1e-3}
PATIENCE = {"frozen": 20, "adapt": 50, "injection": 20}
MAX_EPOCHS = 100

GAP_WIDTHS = {"vgg16": 512, "resnet50": 2048}


@dataclass
class TrainSpec:
    backbone: str
    mode: str
    learning_rate: float
    max_epochs: int
    patience: int
    batch_size: int = 16
    seed: int = 0
    html_feature_dim: int | None = None

    @classmethod
    def for_mode(cls, backbone: str, mode: str, **overrides) -> "TrainSpec":
        """The canonical spec for a backbone/mode pair; overrides are for
        experiments and small test runs."""
        if mode not in MODES:
            raise SpecError(f"unknown mode {mode!r}; expected one of {MODES}")
        fields = {
            "backbone": backbone,
            "mode": mode,
            "learning_rate": LEARNING_RATES[mode],
            "max_epochs": MAX_EPOCHS,
            "patience": PATIENCE[mode],
        }
        fields.update(overrides)
        spec = cls(**fields)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise SpecError(
                f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}"
            )
        if self.mode not in MODES:
            raise SpecError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.learning_rate <= 0:
            raise SpecError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise SpecError("max_epochs must be >= 1")
        if self.patience < 0:
            raise SpecError("patience must be >= 0")
        if self.batch_size < 1:
            raise SpecError("batch_size must be >= 1")
        if self.mode == "injection":
            if not self.html_feature_dim or self.html_feature_dim < 1:
                raise SpecError("injection mode requires html_feature_dim >= 1")
        elif self.html_feature_dim is not None:
            raise SpecError("html_feature_dim only applies to injection mode")

    def gap_width(self) -> int:
        return GAP_WIDTHS[self.backbone]

    def head_input_width(self) -> int:
        width = self.gap_width()
        if self.mode == "injection":
            width += self.html_feature_dim
        return width
