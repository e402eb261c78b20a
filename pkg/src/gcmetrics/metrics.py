"""Explicit and implicit per-image consistency metrics, FID, and report assembly."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from gcmetrics.core import (
    ATTRIBUTES,
    SIDES,
    ConfigurationError,
    InvalidInputError,
    NumericalError,
    cosine_similarity,
    pearson_correlation,
)
from gcmetrics.views import EvalSets, split_halves

ERROR_COLUMNS = tuple(f"error_{a}" for a in ATTRIBUTES)
METRIC_COLUMNS = ERROR_COLUMNS + ("explicit_composite", "implicit_similarity")
REPORT_COLUMNS = ("id", "role", "top_source_id", "bottom_source_id") + METRIC_COLUMNS
ROLES = ("consistent", "inconsistent")

# relative indefiniteness tolerance for covariance eigenvalues
PSD_TOL = 1e-6
NEGATIVE_FID_TOL = 1e-8


# -- explicit ---------------------------------------------------------------

def _check_referees(referees: Mapping) -> None:
    missing = [f"{a}/{s}" for a in ATTRIBUTES for s in SIDES if (a, s) not in referees]
    if missing:
        raise ConfigurationError(f"missing referees for: {', '.join(missing)}")
    for (a, s), m in referees.items():
        if getattr(m, "side", s) != s or getattr(m, "attribute", a) != a:
            raise ConfigurationError(f"referee stored under {a}/{s} was trained for {m.attribute}/{m.side}")


def explicit_errors(referees: Mapping, images: Sequence[np.ndarray]) -> list[dict[str, float]]:
    """Per-image |superior prediction - inferior prediction| for every attribute.

    ``images`` are used as given (already band-removed in the evaluation
    protocol); the superior view is the upper half, the inferior the lower.
    """
    _check_referees(referees)
    if len(images) == 0:
        return []
    halves = [split_halves(img) for img in images]
    sup = np.stack([h[0] for h in halves])
    inf = np.stack([h[1] for h in halves])
    out = [dict() for _ in images]
    for a in ATTRIBUTES:
        diff = np.abs(referees[(a, "superior")].predict(sup) - referees[(a, "inferior")].predict(inf))
        for row, d in zip(out, diff):
            row[a] = float(d)
    return out


def explicit_error(referees: Mapping, image) -> dict[str, float]:
    return explicit_errors(referees, [np.asarray(image, dtype=np.float64)])[0]


def explicit_composite(
    per_image_errors: Sequence[Mapping[str, float]],
    normalization: Mapping[str, Sequence[float]] | None = None,
) -> tuple[list[float], dict[str, tuple[float, float]]]:
    """Mean of per-attribute errors after min-max scaling over the pool.

    Pass ``normalization`` (attribute -> (min, max)) to reuse constants from
    another run; values are then clipped into [0, 1].
    """
    if not per_image_errors:
        raise InvalidInputError("empty error pool")
    names = tuple(per_image_errors[0])
    if any(set(m) != set(names) for m in per_image_errors):
        raise InvalidInputError("all error maps must share the same attributes")
    constants: dict[str, tuple[float, float]] = {}
    scaled = []
    for a in names:
        v = np.array([m[a] for m in per_image_errors], dtype=np.float64)
        lo, hi = (float(v.min()), float(v.max())) if normalization is None else map(float, normalization[a])
        constants[a] = (lo, hi)
        s = np.zeros_like(v) if hi == lo else np.clip((v - lo) / (hi - lo), 0.0, 1.0)
        scaled.append(s)
    composite = np.mean(np.stack(scaled), axis=0)
    return [float(c) for c in composite], constants


# -- implicit ---------------------------------------------------------------

def implicit_similarities(encoder, images: Sequence[np.ndarray]) -> list[float]:
    if len(images) == 0:
        return []
    halves = [split_halves(img) for img in images]
    sup = encoder.embed_batch(np.stack([h[0] for h in halves]))
    inf = encoder.embed_batch(np.stack([h[1] for h in halves]))
    return [cosine_similarity(a, b) for a, b in zip(sup, inf)]


def implicit_consistency(encoder, image) -> float:
    return implicit_similarities(encoder, [np.asarray(image, dtype=np.float64)])[0]


# -- FID --------------------------------------------------------------------

@dataclass
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int


def gaussian_stats(features) -> GaussianStats:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"features must be a 2D (count, dim) array, got shape {x.shape}")
    if x.shape[0] < 2:
        raise InvalidInputError("need at least 2 feature vectors")
    mu = x.mean(axis=0)
    d = x - mu
    cov = d.T @ d / (x.shape[0] - 1)
    return GaussianStats(mu, (cov + cov.T) / 2, x.shape[0])


def _clamp_roundoff(w: np.ndarray) -> np.ndarray:
    # eigenvalues below the matrix's numerical resolution are zero; taking
    # sqrt of round-off would otherwise inflate the trace term
    top = max(float(w.max()), 0.0)
    tol = top * w.size * np.finfo(np.float64).eps * 10
    return np.where(w > tol, w, 0.0)


def _psd_eigh(cov: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(cov)
    top = max(float(w.max()), 0.0)
    if w.min() < -PSD_TOL * top:
        raise NumericalError(f"{name} covariance is indefinite (min eigenvalue {w.min():.3g}, max {top:.3g})")
    return _clamp_roundoff(w), v


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of the product square root is taken as the sum of square
    roots of the eigenvalues of ``A^(1/2) S_b A^(1/2)`` (A = S_a), which is
    similar to ``S_a S_b`` but symmetric.
    """
    mu1, mu2 = np.atleast_1d(a.mean), np.atleast_1d(b.mean)
    s1, s2 = np.atleast_2d(a.covariance), np.atleast_2d(b.covariance)
    if mu1.shape != mu2.shape or s1.shape != s2.shape or s1.shape != (mu1.size, mu1.size):
        raise InvalidInputError(f"dimension mismatch: {mu1.shape}/{s1.shape} vs {mu2.shape}/{s2.shape}")
    w1, v1 = _psd_eigh(s1, "first")
    _psd_eigh(s2, "second")
    root1 = (v1 * np.sqrt(w1)) @ v1.T
    m = root1 @ s2 @ root1
    wm = np.linalg.eigvalsh((m + m.T) / 2)
    tr_covmean = float(np.sqrt(_clamp_roundoff(wm)).sum())
    diff = mu1 - mu2
    value = float(diff @ diff) + float(np.trace(s1)) + float(np.trace(s2)) - 2.0 * tr_covmean
    if value < 0:
        scale = max(1.0, float(np.trace(s1) + np.trace(s2)))
        if value < -NEGATIVE_FID_TOL * scale:
            raise NumericalError(f"Frechet distance came out negative ({value:.3g})")
        value = 0.0
    return value


class EncoderFeatures:
    """FID feature extractor backed by a trained contrastive encoder.

    ``"halves"`` concatenates the superior and inferior embeddings, so the
    feature distribution sees how the two halves co-vary; ``"whole"``
    embeds the full image resampled to the encoder input shape.
    """

    def __init__(self, encoder, mode: str = "halves"):
        if mode not in ("halves", "whole"):
            raise ConfigurationError(f"unknown extractor mode {mode!r}")
        self.encoder = encoder
        self.mode = mode

    @property
    def name(self) -> str:
        digest = getattr(self.encoder, "training_config_digest", "") or "untracked"
        return f"contrastive-encoder/{self.mode}/{self.encoder.feature_source}/{digest}"

    def __call__(self, images: Sequence[np.ndarray]) -> np.ndarray:
        if self.mode == "whole":
            return self.encoder.embed_batch(np.stack(images))
        halves = [split_halves(img) for img in images]
        sup = self.encoder.embed_batch(np.stack([h[0] for h in halves]))
        inf = self.encoder.embed_batch(np.stack([h[1] for h in halves]))
        return np.concatenate([sup, inf], axis=1)


def fid(reference_images: Sequence[np.ndarray], eval_images: Sequence[np.ndarray],
        extractor: Callable[[Sequence[np.ndarray]], np.ndarray]) -> float:
    if len(reference_images) < 2 or len(eval_images) < 2:
        raise InvalidInputError("FID needs at least 2 images per set")
    return frechet_distance(gaussian_stats(extractor(list(reference_images))),
                            gaussian_stats(extractor(list(eval_images))))


# -- reports ----------------------------------------------------------------

def aggregate(rows: Sequence[Mapping]) -> dict[str, dict[str, dict[str, float]]]:
    """Mean and population std of every metric column, per role."""
    out = {}
    for role in ROLES:
        sub = [r for r in rows if r["role"] == role]
        if not sub:
            continue
        out[role] = {}
        for col in METRIC_COLUMNS:
            v = np.array([r[col] for r in sub], dtype=np.float64)
            out[role][col] = {"mean": float(v.mean()), "std": float(v.std()), "count": int(v.size)}
    return out


@dataclass
class MetricReport:
    per_image: list[dict]
    aggregates: dict
    normalization_constants: dict[str, tuple[float, float]]
    fid: dict | None = None
    correlation: float | None = None
    config: dict = field(default_factory=dict)
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "config": self.config,
            "columns": list(REPORT_COLUMNS),
            "per_image": self.per_image,
            "aggregates": self.aggregates,
            "normalization_constants": {k: list(v) for k, v in self.normalization_constants.items()},
            "fid": self.fid,
            "correlation": self.correlation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            per_image=d["per_image"],
            aggregates=d["aggregates"],
            normalization_constants={k: tuple(v) for k, v in d["normalization_constants"].items()},
            fid=d.get("fid"),
            correlation=d.get("correlation"),
            config=d.get("config", {}),
            config_digest=d.get("config_digest", ""),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
        return path

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def table(self) -> str:
        """Plain-text FID / explicit / implicit comparison across roles."""
        lines = [f"{'Dataset':<14}{'FID':>10}{'Explicit':>20}{'Implicit':>20}"]
        for role in ROLES:
            if role not in self.aggregates:
                continue
            agg = self.aggregates[role]
            f = (self.fid or {}).get(role)
            fs = f"{f:.4f}" if f is not None else "n/a"
            ex, im = agg["explicit_composite"], agg["implicit_similarity"]
            lines.append(
                f"{role.capitalize():<14}{fs:>10}"
                f"{ex['mean']:>11.3f} ± {ex['std']:<6.3f}{im['mean']:>11.3f} ± {im['std']:<6.3f}"
            )
        if self.correlation is not None:
            lines.append(f"Pearson r (implicit vs explicit composite): {self.correlation:.3f}")
        return "\n".join(lines)


def evaluate_dataset(eval_sets: EvalSets, referees: Mapping, encoder, extractor=None,
                     config: dict | None = None, config_digest: str = "") -> MetricReport:
    """Score the consistent and inconsistent sets and assemble a report.

    Composites are normalised over the union of both sets; both FIDs use
    ``eval_sets.reference`` as the reference set.
    """
    if not eval_sets.consistent or not eval_sets.inconsistent:
        raise InvalidInputError("consistent and inconsistent sets must be non-empty")
    extractor = extractor or EncoderFeatures(encoder)
    items = list(eval_sets.consistent) + list(eval_sets.inconsistent)
    images = [e.image for e in items]
    errors = explicit_errors(referees, images)
    composites, constants = explicit_composite(errors)
    sims = implicit_similarities(encoder, images)

    rows = []
    for e, err, comp, sim in zip(items, errors, composites, sims):
        row = {"id": e.id, "role": e.role, "top_source_id": e.top_source_id, "bottom_source_id": e.bottom_source_id}
        row.update({f"error_{a}": err[a] for a in ATTRIBUTES})
        row["explicit_composite"] = comp
        row["implicit_similarity"] = sim
        rows.append(row)

    fids = None
    if len(eval_sets.reference) >= 2:
        ref = [e.image for e in eval_sets.reference]
        fids = {
            "extractor": getattr(extractor, "name", repr(extractor)),
            "consistent": fid(ref, [e.image for e in eval_sets.consistent], extractor),
            "inconsistent": fid(ref, [e.image for e in eval_sets.inconsistent], extractor),
        }

    try:
        r = pearson_correlation(sims, composites)
    except InvalidInputError:
        r = None
    if r is not None and not math.isfinite(r):
        r = None

    cfg = dict(config or {})
    cfg.setdefault("band", eval_sets.band)
    cfg.setdefault("feature_source", getattr(encoder, "feature_source", None))
    return MetricReport(rows, aggregate(rows), constants, fids, r, cfg, config_digest)
