"""SimCLR-style contrastive encoder used for the implicit consistency score."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter
from torch import nn

from gcmetrics.core import ConfigurationError, InvalidInputError, as_image, digest
from gcmetrics.data import SubjectRecord
from gcmetrics.nets import build_backbone, load_model_dir, resize, save_model_dir, to_batch
from gcmetrics.views import DEFAULT_BAND, band_rows

AUGMENTATIONS = ("crop_resize", "hflip", "jitter", "blur")
FEATURE_SOURCES = ("backbone", "projection")


@dataclass(frozen=True)
class ContrastiveTrainConfig:
    epochs: int = 30
    batch_size: int = 64
    temperature: float = 0.5
    augmentations: tuple[str, ...] = AUGMENTATIONS
    seed: int = 0
    learning_rate: float = 1e-3
    capacity: str = "tiny"
    projection_dim: int = 32
    feature_source: str = "backbone"
    band: float = DEFAULT_BAND
    input_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2 (the loss needs negatives), got {self.batch_size}")
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        unknown = [a for a in self.augmentations if a not in AUGMENTATIONS]
        if unknown:
            raise ConfigurationError(f"unknown augmentations {unknown}; expected a subset of {AUGMENTATIONS}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigurationError(f"feature_source must be one of {FEATURE_SOURCES}")


def default_input_shape(image_shape: tuple[int, int], band: float = DEFAULT_BAND) -> tuple[int, int]:
    """Shape of one half of a band-removed image; evaluation views need no resampling."""
    H, W = image_shape
    lo, hi = band_rows(H, band) if band else (H // 2, H // 2)
    return ((H - (hi - lo)) // 2, W)


def _resize_image(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return resize(to_batch(img), shape)[0, 0].double().numpy()


def _random_band(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    H = img.shape[0]
    h = max(2, int(round(rng.uniform(0.35, 0.6) * H)))
    top = int(rng.integers(0, H - h + 1))
    return img[top:top + h]


def _crop_pair(img: np.ndarray, rng: np.random.Generator, band: float) -> list[np.ndarray]:
    """Half the time the superior/inferior halves used at evaluation, else two random row bands."""
    if rng.random() < 0.5:
        lo, hi = band_rows(img.shape[0], band) if band else (img.shape[0] // 2,) * 2
        pair = [img[:lo], img[hi:]]
        return pair if rng.random() < 0.5 else pair[::-1]
    return [_random_band(img, rng), _random_band(img, rng)]


def augment_pair(image, config: ContrastiveTrainConfig, draw_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of ``image``, resized to the encoder input shape."""
    img = as_image(image)
    shape = config.input_shape or default_input_shape(img.shape, config.band)
    rng = np.random.default_rng(draw_seed)
    crops = _crop_pair(img, rng, config.band) if "crop_resize" in config.augmentations else [img, img]
    views = []
    for v in crops:
        v = _resize_image(v, shape)
        if "hflip" in config.augmentations and rng.random() < 0.5:
            v = v[:, ::-1]
        if "jitter" in config.augmentations:
            v = v * rng.uniform(0.8, 1.2) + rng.uniform(-0.1, 0.1)
        if "blur" in config.augmentations and rng.random() < 0.5:
            v = gaussian_filter(v, sigma=rng.uniform(0.1, 1.5))
        views.append(np.clip(v, 0.0, 1.0))
    return views[0], views[1]


def nt_xent_loss(embeddings, temperature: float = 0.5):
    """Normalized temperature-scaled cross entropy over interleaved positive pairs.

    Rows ``2k`` and ``2k + 1`` of ``embeddings`` are the two views of sample
    ``k``.  Accepts a tensor (returns a differentiable scalar tensor) or an
    array-like (returns a float).
    """
    as_float = not isinstance(embeddings, torch.Tensor)
    z = torch.as_tensor(np.asarray(embeddings, dtype=np.float64)) if as_float else embeddings
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 4:
        raise InvalidInputError(f"need 2N >= 4 embeddings in pairs, got shape {tuple(z.shape)}")
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be > 0, got {temperature}")
    zn = F.normalize(z, dim=1)
    logits = zn @ zn.T / temperature
    n2 = z.shape[0]
    self_mask = torch.eye(n2, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    positives = torch.arange(n2, device=z.device) ^ 1
    loss = F.cross_entropy(logits, positives)
    return float(loss) if as_float else loss


class EncoderModel(nn.Module):
    def __init__(self, config: ContrastiveTrainConfig, input_shape: tuple[int, int], training_config_digest: str = ""):
        super().__init__()
        self.config = config
        self.input_shape = tuple(input_shape)
        self.training_config_digest = training_config_digest
        self.backbone = build_backbone(config.capacity)
        d = self.backbone.out_dim
        self.projection_head = nn.Sequential(nn.Linear(d, d), nn.ReLU(), nn.Linear(d, config.projection_dim))

    @property
    def feature_source(self) -> str:
        return self.config.feature_source

    @property
    def embedding_dim(self) -> int:
        if self.feature_source == "projection":
            return self.config.projection_dim
        return self.backbone.out_dim

    def forward(self, x):
        return self.projection_head(self.backbone(x))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = self.backbone(x)
        return self.projection_head(h) if self.feature_source == "projection" else h

    def embed_batch(self, views, batch_size: int = 256) -> np.ndarray:
        """Embed views of any shape; each is resampled to ``input_shape`` first."""
        if isinstance(views, np.ndarray) and views.ndim == 3:
            groups = [views]
        else:
            groups = [np.asarray(v, dtype=np.float64)[None] for v in views]
        self.eval()
        out = []
        with torch.no_grad():
            for g in groups:
                x = resize(to_batch(g), self.input_shape)
                for k in range(0, len(x), batch_size):
                    out.append(self.features(x[k:k + batch_size]).double().numpy())
        return np.concatenate(out, axis=0)

    def metadata(self) -> dict:
        cfg = asdict(self.config)
        cfg["augmentations"] = list(self.config.augmentations)
        return {
            "kind": "encoder",
            "input_shape": list(self.input_shape),
            "embedding_dim": self.embedding_dim,
            "feature_source": self.feature_source,
            "config": cfg,
            "training_config_digest": self.training_config_digest,
            "backend": "torch-cpu",
            "deterministic": True,
        }

    def save(self, directory: str | Path) -> Path:
        return save_model_dir(directory, self.state_dict(), self.metadata())

    @classmethod
    def load(cls, directory: str | Path) -> "EncoderModel":
        state, meta = load_model_dir(directory)
        if meta.get("kind") != "encoder":
            raise ConfigurationError(f"{directory} does not hold an encoder model")
        cfg = dict(meta["config"])
        cfg["augmentations"] = tuple(cfg["augmentations"])
        if cfg.get("input_shape") is not None:
            cfg["input_shape"] = tuple(cfg["input_shape"])
        model = cls(ContrastiveTrainConfig(**cfg), meta["input_shape"], meta["training_config_digest"])
        model.load_state_dict(state)
        return model.eval()


def init_encoder(config: ContrastiveTrainConfig, image_shape: tuple[int, int]) -> EncoderModel:
    """A randomly initialised encoder (the untrained baseline)."""
    torch.manual_seed(config.seed)
    shape = config.input_shape or default_input_shape(image_shape, config.band)
    return EncoderModel(config, shape).eval()


def train_encoder(train: Sequence[SubjectRecord], config: ContrastiveTrainConfig = ContrastiveTrainConfig(),
                  data_digest: str = "") -> EncoderModel:
    """Contrastive training on unlabeled images; attributes in ``train`` are ignored."""
    n = len(train)
    if n < config.batch_size:
        raise InvalidInputError(f"need at least batch_size={config.batch_size} images, got {n}")
    images = [as_image(r.image) for r in train]
    model = init_encoder(config, images[0].shape)
    model.training_config_digest = digest({"config": asdict(model.config), "data": data_digest})
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, config.epochs)
    model.train()
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for k in range(0, n, config.batch_size):
            idx = perm[k:k + config.batch_size]
            if len(idx) < 2:
                continue
            views = []
            for i in idx:
                views.extend(augment_pair(images[i], config, int(rng.integers(0, 2**63 - 1))))
            z = model(to_batch(np.stack(views)))
            loss = nt_xent_loss(z, config.temperature)
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    return model.eval()


def embed(model: EncoderModel, view) -> np.ndarray:
    view = as_image(view, check_range=False)
    return model.embed_batch(view[None])[0]
