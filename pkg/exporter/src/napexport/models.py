"""Model resolution: a seeded toy CNN plus the torchvision registry."""

from __future__ import annotations

import torch
from torch import nn


class ExportError(Exception):
    """Anything that prevents a clean export (reported before files are written)."""


class ToyNet(nn.Module):
    """Small 2-conv-1-dense ReLU classifier for smoke tests and interop checks.

    Works on any input resolution >= 8x8 thanks to the adaptive pool.
    """

    def __init__(self, num_classes: int = 4):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, kernel_size=3, padding=1)
        self.relu1 = nn.ReLU()
        self.pool1 = nn.MaxPool2d(2)
        self.conv2 = nn.Conv2d(8, 12, kernel_size=3, padding=1)
        self.relu2 = nn.ReLU()
        self.pool2 = nn.AdaptiveAvgPool2d(4)
        self.fc = nn.Linear(12 * 4 * 4, 32)
        self.relu3 = nn.ReLU()
        self.head = nn.Linear(32, num_classes)

    def forward(self, x):
        x = self.pool1(self.relu1(self.conv1(x)))
        x = self.pool2(self.relu2(self.conv2(x)))
        x = torch.flatten(x, 1)
        x = self.relu3(self.fc(x))
        return self.head(x)


def resolve_model(model_id: str, weights: str | None = None, seed: int = 0) -> nn.Module:
    """Instantiate a model by id: ``toy`` or any torchvision model name.

    ``weights`` is a checkpoint path, or ``default`` for the torchvision
    pretrained weights (requires network access). Untrained weights are
    seeded so repeat exports are reproducible.
    """
    if model_id == "toy":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            model = ToyNet()
        if weights not in (None, "none"):
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        model.eval()
        return model
    try:
        from torchvision import models as tv_models

        tv_weights = "DEFAULT" if weights == "default" else None
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            model = tv_models.get_model(model_id, weights=tv_weights)
    except ValueError as e:
        raise ExportError(f"unknown model {model_id!r}: {e}") from e
    if weights not in (None, "none", "default"):
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def resolve_modules(model: nn.Module, selectors: list[str]) -> dict[str, nn.Module]:
    """Map layer selectors (module paths) to modules; fails on the first bad one."""
    if not selectors:
        raise ExportError("at least one layer selector is required")
    resolved = {}
    for sel in selectors:
        try:
            resolved[sel] = model.get_submodule(sel)
        except AttributeError as e:
            raise ExportError(f"unknown layer selector {sel!r}: {e}") from e
    return resolved
