"""Shared types and the small amount of scalar math used everywhere else.

Images are plain 2D ``float64`` numpy arrays with intensities in [0, 1];
:func:`as_image` checks that contract at module boundaries.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

ATTRIBUTES = ("age", "bmi", "body_fat_pct")
SIDES = ("superior", "inferior")


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class ConfigurationError(ValueError):
    """Raised for invalid or incomplete run configuration."""


class NumericalError(ArithmeticError):
    """Raised when a computation is numerically ill-posed."""


@dataclass(frozen=True)
class AttributeVector:
    age: float
    bmi: float
    body_fat_pct: float

    def __post_init__(self):
        for name in ATTRIBUTES:
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"attribute {name} is not finite")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def __getitem__(self, name: str) -> float:
        if name not in ATTRIBUTES:
            raise KeyError(name)
        return getattr(self, name)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def as_image(pixels, *, check_range: bool = True) -> np.ndarray:
    """Validate and return ``pixels`` as a 2D float64 image."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidInputError(f"image must be 2D, got shape {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 1:
        raise InvalidInputError(f"image too small: {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("image contains non-finite intensities")
    if check_range and (img.min() < 0.0 or img.max() > 1.0):
        raise InvalidInputError("image intensities outside [0, 1]")
    return img


def digest(obj) -> str:
    """Short sha256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("zero-norm feature vector (degenerate embedding)")
    s = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, s))


def minmax_normalize(values: Sequence[float]) -> list[float]:
    """Affinely map ``values`` onto [0, 1]; a constant list maps to zeros."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("cannot normalize an empty list")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("values must be finite")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return [0.0] * v.size
    return [float(x) for x in (v - lo) / (hi - lo)]


def pearson_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InvalidInputError("x and y must have equal length")
    if x.size < 3:
        raise InvalidInputError("need at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise InvalidInputError("correlation undefined for zero-variance input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))
