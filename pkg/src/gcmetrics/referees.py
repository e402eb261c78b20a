"""Supervised attribute regressors ("referees"), one per (attribute, side)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from gcmetrics.core import ATTRIBUTES, SIDES, ConfigurationError, InvalidInputError, digest
from gcmetrics.data import SubjectRecord
from gcmetrics.nets import build_backbone, load_model_dir, save_model_dir, to_batch
from gcmetrics.views import DEFAULT_BAND, side_view


@dataclass(frozen=True)
class RefereeTrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 3e-3
    seed: int = 0
    capacity: str = "tiny"
    band: float = DEFAULT_BAND

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")


class Regressor(nn.Module):
    def __init__(self, capacity: str):
        super().__init__()
        self.backbone = build_backbone(capacity)
        d = self.backbone.out_dim
        self.head = nn.Sequential(nn.Linear(d, 64), nn.ReLU(), nn.Linear(64, 1))

    def forward(self, x):
        return self.head(self.backbone(x)).squeeze(1)


class RefereeModel:
    """A trained regressor for one attribute seen from one side.

    Targets are learned on a [0, 1] scale and mapped back through
    ``label_range`` so predictions come out in attribute units.
    """

    def __init__(self, net: Regressor, attribute: str, side: str, input_shape: tuple[int, int],
                 label_range: tuple[float, float], config: RefereeTrainConfig, training_config_digest: str):
        self.net = net.eval()
        self.attribute = attribute
        self.side = side
        self.input_shape = tuple(input_shape)
        self.label_range = tuple(label_range)
        self.config = config
        self.training_config_digest = training_config_digest

    @property
    def band(self) -> float:
        return self.config.band

    @property
    def key(self) -> tuple[str, str]:
        return self.attribute, self.side

    def predict(self, views) -> np.ndarray:
        x = to_batch(views)
        if tuple(x.shape[-2:]) != self.input_shape:
            raise InvalidInputError(
                f"{self.attribute}/{self.side} referee expects views of shape {self.input_shape}, "
                f"got {tuple(x.shape[-2:])}"
            )
        lo, hi = self.label_range
        with torch.no_grad():
            out = self.net(x).double().numpy()
        return lo + out * (hi - lo)

    def metadata(self) -> dict:
        return {
            "kind": "referee",
            "attribute": self.attribute,
            "side": self.side,
            "input_shape": list(self.input_shape),
            "label_range": list(self.label_range),
            "config": asdict(self.config),
            "training_config_digest": self.training_config_digest,
            "backend": "torch-cpu",
            "deterministic": True,
        }

    def save(self, directory: str | Path) -> Path:
        return save_model_dir(directory, self.net.state_dict(), self.metadata())

    @classmethod
    def load(cls, directory: str | Path) -> "RefereeModel":
        state, meta = load_model_dir(directory)
        if meta.get("kind") != "referee":
            raise ConfigurationError(f"{directory} does not hold a referee model")
        config = RefereeTrainConfig(**meta["config"])
        net = Regressor(config.capacity)
        net.load_state_dict(state)
        return cls(net, meta["attribute"], meta["side"], meta["input_shape"],
                   meta["label_range"], config, meta["training_config_digest"])


def _check_key(attribute: str, side: str) -> None:
    if attribute not in ATTRIBUTES:
        raise ConfigurationError(f"unknown attribute {attribute!r}; expected one of {ATTRIBUTES}")
    if side not in SIDES:
        raise ConfigurationError(f"unknown side {side!r}; expected one of {SIDES}")


def _views(records: Sequence[SubjectRecord], side: str, band: float) -> np.ndarray:
    shapes = {r.image.shape for r in records}
    if len(shapes) != 1:
        raise InvalidInputError(f"images must share one shape, got {sorted(shapes)}")
    return np.stack([side_view(r.image, side, band) for r in records])


def train_referee(train: Sequence[SubjectRecord], attribute: str, side: str,
                  config: RefereeTrainConfig = RefereeTrainConfig(), data_digest: str = "") -> RefereeModel:
    """Fit a referee with an L1 loss on the ``side`` crop of every training image."""
    _check_key(attribute, side)
    if not train:
        raise InvalidInputError("empty training set")
    x = to_batch(_views(train, side, config.band))
    labels = np.array([r.attributes[attribute] for r in train], dtype=np.float64)
    lo, hi = float(labels.min()), float(labels.max())
    if hi == lo:
        hi = lo + 1.0
    y = torch.tensor((labels - lo) / (hi - lo), dtype=torch.float32)

    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    net = Regressor(config.capacity)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, config.epochs)
    n = len(train)
    net.train()
    for _ in range(config.epochs):
        perm = torch.randperm(n, generator=gen)
        for k in range(0, n, config.batch_size):
            idx = perm[k:k + config.batch_size]
            loss = (net(x[idx]) - y[idx]).abs().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()

    run_digest = digest({"attribute": attribute, "side": side, "config": asdict(config), "data": data_digest})
    return RefereeModel(net, attribute, side, tuple(x.shape[-2:]), (lo, hi), config, run_digest)


def predict_attribute(model: RefereeModel, view) -> float:
    view = np.asarray(view, dtype=np.float64)
    if view.ndim != 2:
        raise InvalidInputError(f"view must be 2D, got shape {view.shape}")
    return float(model.predict(view[None])[0])


def validate_referee(model, val: Sequence[SubjectRecord]) -> tuple[float, float]:
    """Mean and (population) standard deviation of the absolute error on ``val``."""
    if not val:
        raise InvalidInputError("empty validation set")
    views = _views(val, model.side, model.band)
    pred = np.asarray(model.predict(views), dtype=np.float64)
    truth = np.array([r.attributes[model.attribute] for r in val], dtype=np.float64)
    err = np.abs(pred - truth)
    return float(err.mean()), float(err.std())


def referee_dirname(attribute: str, side: str) -> str:
    return f"referee-{attribute}-{side}"


def load_referees(models_dir: str | Path) -> dict[tuple[str, str], RefereeModel]:
    """Load all six referees from ``models_dir``, checking side discipline."""
    models_dir = Path(models_dir)
    missing = [
        referee_dirname(a, s) for a in ATTRIBUTES for s in SIDES
        if not (models_dir / referee_dirname(a, s) / "metadata.json").is_file()
    ]
    if missing:
        raise ConfigurationError(f"missing referee models in {models_dir}: {', '.join(missing)}")
    referees = {}
    for a in ATTRIBUTES:
        for s in SIDES:
            m = RefereeModel.load(models_dir / referee_dirname(a, s))
            if m.key != (a, s):
                raise ConfigurationError(f"{referee_dirname(a, s)} holds a {m.attribute}/{m.side} referee")
            referees[(a, s)] = m
    return referees
