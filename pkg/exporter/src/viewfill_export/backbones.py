"""Frozen torchvision backbones exposed as feature extractors.

Each builder strips the classification layer so the model maps a
preprocessed image batch to pooled feature vectors. Weights come from an
optional local checkpoint; without one the backbone is seeded-random but
deterministic, which keeps toy runs and tests self-contained (nothing is
ever downloaded).
"""

from pathlib import Path
from typing import Optional

import torch
from torchvision import models


def _resnet(ctor):
    def build():
        model = ctor(weights=None)
        width = model.fc.in_features
        model.fc = torch.nn.Identity()
        return model, width

    return build


_BUILDERS = {
    "resnet18": _resnet(models.resnet18),
    "resnet34": _resnet(models.resnet34),
    "resnet50": _resnet(models.resnet50),
}

BACKBONE_WIDTHS = {"resnet18": 512, "resnet34": 512, "resnet50": 2048}


def backbone_width(name: str) -> int:
    if name not in BACKBONE_WIDTHS:
        raise ValueError(f"unknown backbone {name!r}; known: {sorted(_BUILDERS)}")
    return BACKBONE_WIDTHS[name]


def build_backbone(
    name: str, seed: int = 0, checkpoint: Optional[Path] = None
) -> tuple[torch.nn.Module, int]:
    """Construct an eval-mode feature extractor and report its width."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown backbone {name!r}; known: {sorted(_BUILDERS)}")
    torch.manual_seed(seed)
    model, width = _BUILDERS[name]()
    if checkpoint is not None:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state, strict=False)
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model, width
