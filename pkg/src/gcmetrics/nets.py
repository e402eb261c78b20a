"""Convolutional backbones and model-directory persistence shared by referees and encoder."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from gcmetrics.core import ConfigurationError

CAPACITIES = ("tiny", "small", "paper-scale")
WEIGHTS = "weights.pt"
METADATA = "metadata.json"


class ConvBackbone(nn.Module):
    """Small BN-ReLU conv stack ending in global average pooling."""

    def __init__(self, channels=(16, 32, 32), pool: int = 2):
        super().__init__()
        layers: list[nn.Module] = [nn.AvgPool2d(pool)] if pool > 1 else []
        c_in = 1
        for i, c in enumerate(channels):
            k, stride = (5, 1) if i == 0 else (3, 2 if i == 1 else 1)
            layers += [nn.Conv2d(c_in, c, k, stride=stride, padding=k // 2), nn.BatchNorm2d(c), nn.ReLU()]
            c_in = c
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
        self.body = nn.Sequential(*layers)
        self.out_dim = c_in

    def forward(self, x):
        return self.body(x)


class ResNet50Backbone(nn.Module):
    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        net.conv1 = nn.Conv2d(1, 64, kernel_size=7, stride=2, padding=3, bias=False)
        net.fc = nn.Identity()
        self.net = net
        self.out_dim = 2048

    def forward(self, x):
        return self.net(x)


def build_backbone(capacity: str) -> nn.Module:
    if capacity == "tiny":
        return ConvBackbone((16, 32, 32))
    if capacity == "small":
        return ConvBackbone((32, 64, 64, 64))
    if capacity == "paper-scale":
        return ResNet50Backbone()
    raise ConfigurationError(f"unknown capacity {capacity!r}; expected one of {CAPACITIES}")


def to_batch(views) -> torch.Tensor:
    """(N, H, W) array-like -> float32 tensor of shape (N, 1, H, W)."""
    arr = np.asarray(views, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr))[:, None]


def resize(views: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Antialiased bilinear resample of a (N, 1, H, W) batch; no-op at the target shape."""
    if tuple(views.shape[-2:]) == tuple(shape):
        return views
    return F.interpolate(views, size=tuple(shape), mode="bilinear", align_corners=False, antialias=True)


def save_model_dir(directory: str | Path, state: dict, metadata: dict) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(state, directory / WEIGHTS)
        (directory / METADATA).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write model to {directory}: {exc.strerror or exc}") from exc
    return directory


def load_model_dir(directory: str | Path) -> tuple[dict, dict]:
    directory = Path(directory)
    meta_path = directory / METADATA
    if not meta_path.is_file() or not (directory / WEIGHTS).is_file():
        raise ConfigurationError(f"no model found at {directory}")
    metadata = json.loads(meta_path.read_text(encoding="utf-8"))
    state = torch.load(directory / WEIGHTS, map_location="cpu", weights_only=True)
    return state, metadata
