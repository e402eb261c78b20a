"""View extraction and consistent/inconsistent evaluation-set construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gcmetrics.core import ATTRIBUTES, AttributeVector, InvalidInputError, as_image, round_half_up
from gcmetrics.data import SubjectRecord, read_manifest, read_png16, write_manifest

MODES = ("superior_inferior", "random", "grid")
DEFAULT_BAND = 0.10


@dataclass
class ViewPair:
    view_a: np.ndarray
    view_b: np.ndarray
    mode: str
    source_ids: tuple[str, ...] = ()


@dataclass
class EvalImage:
    id: str
    image: np.ndarray
    role: str
    top_source_id: str | None = None
    bottom_source_id: str | None = None
    attributes: AttributeVector | None = None


@dataclass
class EvalSets:
    reference: list[EvalImage] = field(default_factory=list)
    consistent: list[EvalImage] = field(default_factory=list)
    inconsistent: list[EvalImage] = field(default_factory=list)
    band: float = DEFAULT_BAND
    seed: int | None = None

    def all(self) -> list[EvalImage]:
        return self.reference + self.consistent + self.inconsistent


def band_rows(height: int, fraction: float) -> tuple[int, int]:
    """Half-open row interval removed by :func:`remove_central_band`."""
    return round_half_up(height * (0.5 - fraction / 2)), round_half_up(height * (0.5 + fraction / 2))


def remove_central_band(image, fraction: float = DEFAULT_BAND) -> np.ndarray:
    img = as_image(image)
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"band fraction must lie in (0, 1), got {fraction}")
    lo, hi = band_rows(img.shape[0], fraction)
    if img.shape[0] - (hi - lo) < 2:
        raise InvalidInputError("band removal leaves fewer than 2 rows")
    return np.concatenate([img[:lo], img[hi:]], axis=0)


def stitch_inconsistent(top_source, bottom_source) -> np.ndarray:
    top = as_image(top_source)
    bottom = as_image(bottom_source)
    if top.shape != bottom.shape:
        raise InvalidInputError(f"shape mismatch: {top.shape} vs {bottom.shape}")
    half = top.shape[0] // 2
    return np.concatenate([top[:half], bottom[half:]], axis=0)


def split_halves(image) -> tuple[np.ndarray, np.ndarray]:
    img = as_image(image)
    half = img.shape[0] // 2
    return img[:half], img[half:]


def side_view(image, side: str, band: float | None = DEFAULT_BAND) -> np.ndarray:
    """Superior or inferior half of ``image`` after optional central-band removal.

    This is the crop the referees are trained and evaluated on; applying the
    same rule everywhere keeps their input shape fixed.
    """
    img = as_image(image)
    if band:
        img = remove_central_band(img, band)
    sup, inf = split_halves(img)
    if side == "superior":
        return sup
    if side == "inferior":
        return inf
    raise InvalidInputError(f"unknown side {side!r}")


def _grid_edges(n: int, parts: int) -> list[int]:
    return [round_half_up(i * n / parts) for i in range(parts + 1)]


def crop_views(image, mode: str = "superior_inferior", params: dict | None = None, seed: int = 0) -> ViewPair:
    """Cut two views out of ``image``.

    ``random`` takes ``params={"height": h}`` and places two non-overlapping
    full-width row bands of height ``h``; ``grid`` takes
    ``params={"rows": R, "cols": C, "cells": ((i, j), (k, l))}``.
    """
    img = as_image(image)
    params = params or {}
    H, W = img.shape
    if mode == "superior_inferior":
        a, b = split_halves(img)
        return ViewPair(a, b, mode)

    if mode == "random":
        h = int(params.get("height", H // 4))
        if h < 1 or 2 * h > H:
            raise InvalidInputError(f"cannot place two non-overlapping bands of height {h} in {H} rows")
        rng = np.random.default_rng(seed)
        first = int(rng.integers(0, H - h + 1))
        # starts for the second band that do not overlap the first
        allowed = [s for s in range(H - h + 1) if s + h <= first or s >= first + h]
        if not allowed:
            raise InvalidInputError(f"cannot place two non-overlapping bands of height {h} in {H} rows")
        second = int(allowed[rng.integers(0, len(allowed))])
        top, bot = sorted((first, second))
        return ViewPair(img[top:top + h], img[bot:bot + h], mode)

    if mode == "grid":
        R, C = int(params.get("rows", 2)), int(params.get("cols", 2))
        cells = params.get("cells", ((0, 0), (R - 1, C - 1)))
        if R < 1 or C < 1 or R > H or C > W:
            raise InvalidInputError(f"invalid {R}x{C} grid for image {H}x{W}")
        re, ce = _grid_edges(H, R), _grid_edges(W, C)
        views = []
        for i, j in cells:
            if not (0 <= i < R and 0 <= j < C):
                raise InvalidInputError(f"cell ({i}, {j}) outside {R}x{C} grid")
            views.append(img[re[i]:re[i + 1], ce[j]:ce[j + 1]])
        return ViewPair(views[0], views[1], mode)

    raise InvalidInputError(f"unknown crop mode {mode!r}; expected one of {MODES}")


def build_eval_sets(test_records: Sequence[SubjectRecord], seed: int = 0, band: float = DEFAULT_BAND) -> EvalSets:
    """Reference / consistent / inconsistent sets from held-out subjects.

    The shuffled pool is halved: the first half becomes the FID reference,
    the second half the consistent set.  Inconsistent images stitch the top
    of consistent subject ``i`` onto the bottom of subject ``i + 1``
    (cyclically), so every subject is used once as top and once as bottom.
    """
    n = len(test_records)
    if n < 4:
        raise InvalidInputError(f"need at least 4 test records, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [test_records[i] for i in order]
    P, Q = shuffled[: n // 2], shuffled[n // 2:]

    sets = EvalSets(band=band, seed=seed)
    for r in P:
        sets.reference.append(EvalImage(r.id, remove_central_band(r.image, band), "reference", attributes=r.attributes))
    for r in Q:
        sets.consistent.append(EvalImage(r.id, remove_central_band(r.image, band), "consistent", attributes=r.attributes))
    m = len(Q)
    for i in range(m):
        top, bottom = Q[i], Q[(i + 1) % m]
        img = remove_central_band(stitch_inconsistent(top.image, bottom.image), band)
        sets.inconsistent.append(
            EvalImage(f"stitch-{top.id}-{bottom.id}", img, "inconsistent", top.id, bottom.id)
        )
    return sets


def distant_pairs(
    records: Sequence[SubjectRecord],
    min_gaps: dict[str, float],
    n_pairs: int,
    seed: int = 0,
) -> list[tuple[SubjectRecord, SubjectRecord]]:
    """Greedy (top, bottom) pairs whose attributes differ by at least ``min_gaps``.

    Each record is used at most once as top and once as bottom.
    """
    for name in min_gaps:
        if name not in ATTRIBUTES:
            raise InvalidInputError(f"unknown attribute {name!r}")
    rng = np.random.default_rng(seed)
    n = len(records)
    used_bottom = set()
    pairs = []
    for i in rng.permutation(n):
        if len(pairs) == n_pairs:
            break
        a = records[i].attributes
        for j in rng.permutation(n):
            if j == i or j in used_bottom:
                continue
            b = records[j].attributes
            if all(abs(a[k] - b[k]) >= g for k, g in min_gaps.items()):
                used_bottom.add(j)
                pairs.append((records[i], records[j]))
                break
    if len(pairs) < n_pairs:
        raise InvalidInputError(f"only found {len(pairs)} of {n_pairs} pairs meeting the attribute gaps")
    return pairs


EVAL_SIDECAR = "evalsets.json"


def save_eval_sets(sets: EvalSets, directory: str | Path, extra: dict | None = None) -> None:
    """Persist ``sets`` as rasters + manifest with role and stitch-source columns."""
    rows, images = [], []
    for e in sets.all():
        attrs = e.attributes.as_dict() if e.attributes is not None else {a: None for a in ATTRIBUTES}
        rows.append({
            "id": e.id,
            "filename": f"images/{e.role}-{e.id}.png",
            **attrs,
            "split": "test",
            "role": e.role,
            "top_source_id": e.top_source_id,
            "bottom_source_id": e.bottom_source_id,
        })
        images.append(e.image)
    write_manifest(directory, rows, images)
    meta = {"band": sets.band, "seed": sets.seed, **(extra or {})}
    Path(directory, EVAL_SIDECAR).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_eval_sets(directory: str | Path) -> EvalSets:
    directory = Path(directory)
    meta_path = directory / EVAL_SIDECAR
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.is_file() else {}
    sets = EvalSets(band=meta.get("band", DEFAULT_BAND), seed=meta.get("seed"))
    for row in read_manifest(directory):
        attrs = None
        if row.get("age") is not None:
            attrs = AttributeVector(row["age"], row["bmi"], row["body_fat_pct"])
        e = EvalImage(row["id"], read_png16(directory / row["filename"]), row["role"],
                      row.get("top_source_id"), row.get("bottom_source_id"), attrs)
        getattr(sets, row["role"]).append(e)
    return sets
