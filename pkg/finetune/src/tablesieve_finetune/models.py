"""Backbone construction: VGG16/ResNet50 with a one-node sigmoid head.

The torchvision classifier stack is replaced by global average pooling
over the last convolutional output followed by a single dense unit.
`frozen` trains only that head; `adapt` trains everything; `injection`
keeps the backbone frozen and concatenates standardized HTML feature
vectors into the head input.
"""

from __future__ import annotations

import hashlib

import torch
import torchvision

from .errors import SpecError, WeightsUnavailableError
from .spec import TrainSpec


class TableClassifier(torch.nn.Module):
    def __init__(self, spec: TrainSpec, backbone: torch.nn.Module):
        super().__init__()
        self.spec = spec
        self.backbone = backbone
        self.head = torch.nn.Linear(spec.head_input_width(), 1)
        # Standardization constants; identity until training sets them.
        self.register_buffer("feat_mean", torch.zeros(spec.gap_width()))
        self.register_buffer("feat_std", torch.ones(spec.gap_width()))
        if spec.mode == "injection":
            self.register_buffer("html_mean", torch.zeros(spec.html_feature_dim))
            self.register_buffer("html_std", torch.ones(spec.html_feature_dim))
        if spec.mode in ("frozen", "injection"):
            self.backbone.requires_grad_(False)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """Raw GAP vectors, (N, gap_width)."""
        return self.backbone(images).mean(dim=(2, 3))

    def logits(self, features: torch.Tensor, html=None) -> torch.Tensor:
        z = (features - self.feat_mean) / self.feat_std
        if self.spec.mode == "injection":
            if html is None:
                raise SpecError("injection model needs html feature vectors")
            z = torch.cat([z, (html - self.html_mean) / self.html_std], dim=1)
        return self.head(z).squeeze(1)

    def forward(self, images: torch.Tensor, html=None) -> torch.Tensor:
        return self.logits(self.features(images), html)

    def probabilities(self, images: torch.Tensor, html=None) -> torch.Tensor:
        return torch.sigmoid(self.forward(images, html))


def _load_backbone(spec: TrainSpec, allow_random_init: bool) -> torch.nn.Module:
    builders = {
        "vgg16": (torchvision.models.vgg16, "IMAGENET1K_V1"),
        "resnet50": (torchvision.models.resnet50, "IMAGENET1K_V2"),
    }
    builder, weights = builders[spec.backbone]
    if allow_random_init:
        torch.manual_seed(spec.seed)
        net = builder(weights=None)
    else:
        try:
            net = builder(weights=weights)
        except Exception as exc:
            raise WeightsUnavailableError(
                f"pretrained {spec.backbone} weights could not be loaded "
                f"({exc}); pass --allow-random-init to proceed with a "
                f"seeded random backbone"
            ) from exc
    if spec.backbone == "vgg16":
        return net.features
    # resnet50: keep everything up to the last residual stage.
    return torch.nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool,
        net.layer1, net.layer2, net.layer3, net.layer4,
    )


def build_model(spec: TrainSpec, allow_random_init: bool = False) -> TableClassifier:
    spec.validate()
    backbone = _load_backbone(spec, allow_random_init)
    torch.manual_seed(spec.seed)  # head init is part of the run seed
    model = TableClassifier(spec, backbone)
    model.eval()
    return model


def trainable_parameter_count(model: torch.nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def backbone_hash(model: TableClassifier) -> str:
    """Digest of every backbone weight, for frozen-mode audits."""
    digest = hashlib.sha256()
    state = model.backbone.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()
