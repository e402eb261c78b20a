"""Phantom cohorts, real-volume ingestion helpers and on-disk cohort format.

A phantom is a vertical "body" silhouette on a black background.  Three
attributes are drawn into it so that each one can be read off either half
of the image on its own:

* bmi sets the silhouette width,
* body fat sets the thickness of a bright rim along both silhouette edges,
* age sets the period of a horizontal stripe texture inside the body.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from gcmetrics.core import (
    ATTRIBUTES,
    AttributeVector,
    ConfigurationError,
    InvalidInputError,
    as_image,
    round_half_up,
)

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.jsonl"
COHORT_COLUMNS = ("id", "filename", "age", "bmi", "body_fat_pct", "split")

BACKGROUND = 0.0
INTERIOR = 0.5
RIM = 0.9
STRIPE_AMPLITUDE = 0.15
TAPER = 0.05


@dataclass(frozen=True)
class PhantomConfig:
    height: int = 192
    width: int = 96
    age_range: tuple[float, float] = (20.0, 90.0)
    bmi_range: tuple[float, float] = (15.0, 40.0)
    body_fat_range: tuple[float, float] = (5.0, 50.0)
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("height", "width"):
            v = getattr(self, name)
            if int(v) != v or v < 2 or v % 2:
                raise ConfigurationError(f"{name} must be an even integer >= 2, got {v}")
        for name in ("age_range", "bmi_range", "body_fat_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise ConfigurationError(f"{name} must satisfy min < max, got ({lo}, {hi})")
        if not 0.0 <= self.noise_level <= 0.1:
            raise ConfigurationError(f"noise_level must lie in [0, 0.1], got {self.noise_level}")

    def attribute_range(self, attribute: str) -> tuple[float, float]:
        return {
            "age": self.age_range,
            "bmi": self.bmi_range,
            "body_fat_pct": self.body_fat_range,
        }[attribute]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        d = dict(d)
        for k in ("age_range", "bmi_range", "body_fat_range"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        return cls(**d)


@dataclass
class SubjectRecord:
    id: str
    image: np.ndarray
    attributes: AttributeVector
    split: str | None = None


# -- encoding ---------------------------------------------------------------

def width_fraction(bmi: float) -> float:
    return 0.3 + 0.5 * (bmi - 15.0) / 25.0


def rim_fraction(body_fat_pct: float) -> float:
    return 0.02 + 0.10 * (body_fat_pct - 5.0) / 45.0


def stripe_period(age: float) -> int:
    return max(2, round_half_up(16.0 - 12.0 * (age - 20.0) / 70.0))


def taper_profile(height: int) -> np.ndarray:
    """Per-row width multiplier in [0.95, 1]; equal to 1 at top, middle and bottom."""
    u = np.arange(height) / (height - 1)
    return 1.0 - TAPER * np.sin(2.0 * np.pi * u) ** 2


def _check_in_range(attrs: AttributeVector, config: PhantomConfig) -> None:
    for name in ATTRIBUTES:
        lo, hi = config.attribute_range(name)
        v = attrs[name]
        if not lo <= v <= hi:
            raise InvalidInputError(f"{name}={v} outside configured range [{lo}, {hi}]")


def generate_phantom(attrs: AttributeVector, config: PhantomConfig, subject_seed: int) -> np.ndarray:
    _check_in_range(attrs, config)
    H, W = config.height, config.width
    img = np.full((H, W), BACKGROUND)
    period = stripe_period(attrs.age)
    rows = np.arange(H)
    interior = INTERIOR + STRIPE_AMPLITUDE * np.cos(2.0 * np.pi * rows / period)
    widths = width_fraction(attrs.bmi) * W * taper_profile(H)
    t = rim_fraction(attrs.body_fat_pct)

    for y in range(H):
        w_px = round_half_up(widths[y])
        c0 = (W - w_px) // 2
        k = np.arange(w_px)
        rim_px = t * widths[y]
        # fractional pixel coverage of the rim, measured from the nearer edge
        cover = np.clip(rim_px - np.minimum(k, w_px - 1 - k), 0.0, 1.0)
        img[y, c0:c0 + w_px] = cover * RIM + (1.0 - cover) * interior[y]

    if config.noise_level > 0:
        rng = np.random.default_rng(subject_seed)
        img = img + rng.uniform(-config.noise_level, config.noise_level, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_cohort(n: int, config: PhantomConfig) -> list[SubjectRecord]:
    if n < 1:
        raise InvalidInputError(f"cohort size must be >= 1, got {n}")
    rng = np.random.default_rng(config.seed)
    records = []
    for i in range(n):
        attrs = AttributeVector(
            age=float(rng.uniform(*config.age_range)),
            bmi=float(rng.uniform(*config.bmi_range)),
            body_fat_pct=float(rng.uniform(*config.body_fat_range)),
        )
        subject_seed = int(rng.integers(0, 2**63 - 1))
        image = generate_phantom(attrs, config, subject_seed)
        records.append(SubjectRecord(id=f"phantom-{i:04d}", image=image, attributes=attrs))
    return records


# -- real-data ingestion ----------------------------------------------------

def extract_center_of_mass_slice(volume, axis: int = 1) -> np.ndarray:
    """Return the slice along ``axis`` at the intensity centre of mass.

    ``axis`` is the coronal axis of the volume; with RAS-oriented NIfTI data
    that is axis 1.
    """
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3 or vol.size == 0:
        raise InvalidInputError(f"expected a non-empty 3D volume, got shape {vol.shape}")
    if not np.any(vol > 0):
        raise InvalidInputError("volume has no positive intensity; centre of mass undefined")
    other = tuple(a for a in range(3) if a != axis)
    mass = vol.sum(axis=other)
    total = float(mass.sum())
    if total <= 0:
        raise InvalidInputError("non-positive total intensity; centre of mass undefined")
    com = float(np.dot(np.arange(mass.size), mass)) / total
    index = min(max(round_half_up(com), 0), mass.size - 1)
    return np.take(vol, index, axis=axis)


def normalize_intensity(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidInputError(f"image must be 2D, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("image contains non-finite intensities")
    lo, hi = img.min(), img.max()
    if hi == lo:
        raise InvalidInputError("constant image has no dynamic range")
    out = (img - lo) / (hi - lo)
    return as_image(np.clip(out, 0.0, 1.0))


def load_volume(path: str | Path) -> np.ndarray:
    """Load a 3D intensity array from NIfTI (via nibabel) or ``.npy``."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    try:
        import nibabel as nib
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ConfigurationError("reading NIfTI volumes requires nibabel") from exc
    return np.asarray(nib.load(str(path)).get_fdata(), dtype=np.float64)


def split_dataset(
    records: Sequence[SubjectRecord],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, list[SubjectRecord]]:
    """Shuffle and partition ``records``; rounding leftovers go to train."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise InvalidInputError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidInputError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    bounds = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, n)}
    return {
        split: [replace(records[i], split=split) for i in order[a:b]]
        for split, (a, b) in bounds.items()
    }


# -- persistence ------------------------------------------------------------

def write_png16(path: Path, image: np.ndarray) -> None:
    q = np.rint(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        q = np.asarray(im, dtype=np.uint16)
    return q.astype(np.float64) / 65535.0


def write_manifest(directory: str | Path, rows: Iterable[dict], images: Sequence[np.ndarray]) -> Path:
    """Write one 16-bit PNG per row plus a JSON-lines manifest."""
    directory = Path(directory)
    rows = list(rows)
    try:
        (directory / "images").mkdir(parents=True, exist_ok=True)
        lines = []
        for row, image in zip(rows, images):
            write_png16(directory / row["filename"], image)
            lines.append(json.dumps(row, ensure_ascii=False))
        path = directory / MANIFEST
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write to {directory}: {exc.strerror or exc}") from exc
    return path


def read_manifest(directory: str | Path) -> list[dict]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_cohort(records: Sequence[SubjectRecord], directory: str | Path) -> Path:
    rows = [
        {
            "id": r.id,
            "filename": f"images/{r.id}.png",
            "age": r.attributes.age,
            "bmi": r.attributes.bmi,
            "body_fat_pct": r.attributes.body_fat_pct,
            "split": r.split,
        }
        for r in records
    ]
    return write_manifest(directory, rows, [r.image for r in records])


def load_cohort(directory: str | Path, split: str | None = None) -> list[SubjectRecord]:
    directory = Path(directory)
    records = []
    for row in read_manifest(directory):
        if split is not None and row.get("split") != split:
            continue
        attrs = AttributeVector(row["age"], row["bmi"], row["body_fat_pct"])
        image = read_png16(directory / row["filename"])
        records.append(SubjectRecord(row["id"], image, attrs, row.get("split")))
    return records
