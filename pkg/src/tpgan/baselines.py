"""SMOTE, Borderline-SMOTE (type 1) and ADASYN on flattened pixel vectors.

Every synthetic row is ``x_i + u * (x_j - x_i)`` for a base point ``x_i``, a
minority neighbour ``x_j`` and ``u ~ U[0, 1]``. The ``*_with_parents``
variants also return ``(base, partner, u)`` so callers can audit geometry.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import ImageSet
from .errors import TooFewPoints, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_K = 5
METHODS = ("smote", "b-smote", "adasyn")

SAFE, DANGER, NOISE = 0, 1, 2


@dataclass
class Synthesis:
    points: np.ndarray
    base: np.ndarray
    partner: np.ndarray
    gaps: np.ndarray


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(len(x), int(np.prod(x.shape[1:])))


def synthesize(points: np.ndarray, base: np.ndarray, partner: np.ndarray, gaps: np.ndarray) -> np.ndarray:
    points = _as_points(points)
    return kernels.interpolate(points[base], points[partner], gaps)


def _minority_neighbors(minority: np.ndarray, k: int) -> np.ndarray:
    k_eff = min(k, len(minority) - 1)
    return kernels.kneighbors(minority, minority, k_eff, skip=np.arange(len(minority)))


def _interpolate_from(minority: np.ndarray, bases: np.ndarray, k: int, rng: np.random.Generator) -> Synthesis:
    neighbors = _minority_neighbors(minority, k)
    pick = rng.integers(0, neighbors.shape[1], size=len(bases))
    partners = neighbors[bases, pick]
    gaps = rng.random(len(bases))
    return Synthesis(synthesize(minority, bases, partners, gaps), bases, partners, gaps)


def _cycled(indices: np.ndarray, n_synthetic: int, rng: np.random.Generator) -> np.ndarray:
    order = indices[rng.permutation(len(indices))]
    return order[np.arange(n_synthetic) % len(order)]


def _check(minority: np.ndarray, k: int, n_synthetic: int) -> None:
    if len(minority) < 2:
        raise TooFewPoints(f"need at least 2 minority points, got {len(minority)}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n_synthetic < 0:
        raise ValidationError("n_synthetic must be >= 0")


def smote_with_parents(minority, k: int = DEFAULT_K, n_synthetic: int = 0,
                       rng: np.random.Generator | None = None) -> Synthesis:
    rng = rng if rng is not None else np.random.default_rng()
    minority = _as_points(minority)
    _check(minority, k, n_synthetic)
    if n_synthetic == 0:
        none = np.empty(0, dtype=np.int64)
        return Synthesis(np.empty((0, minority.shape[1])), none, none.copy(), np.empty(0))
    bases = _cycled(np.arange(len(minority)), n_synthetic, rng)
    return _interpolate_from(minority, bases, k, rng)


def smote(minority, k: int = DEFAULT_K, n_synthetic: int = 0, rng: np.random.Generator | None = None) -> np.ndarray:
    return smote_with_parents(minority, k, n_synthetic, rng).points


def _majority_share(minority: np.ndarray, majority: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    """Fraction of majority points among each minority point's k nearest neighbours (self excluded)."""
    pool = np.vstack([minority, majority])
    k_eff = min(k, len(pool) - 1)
    nn = kernels.kneighbors(minority, pool, k_eff, skip=np.arange(len(minority)))
    return (nn >= len(minority)).sum(axis=1) / k_eff, k_eff


def borderline_census(minority, majority, k: int = DEFAULT_K) -> np.ndarray:
    """SAFE / DANGER / NOISE label per minority point."""
    minority, majority = _as_points(minority), _as_points(majority)
    share, k_eff = _majority_share(minority, majority, k)
    n_major = np.rint(share * k_eff).astype(int)
    labels = np.full(len(minority), SAFE)
    labels[(2 * n_major >= k_eff) & (n_major < k_eff)] = DANGER
    labels[n_major == k_eff] = NOISE
    return labels


def borderline_smote_with_parents(minority, majority, k: int = DEFAULT_K, n_synthetic: int = 0,
                                  rng: np.random.Generator | None = None) -> Synthesis:
    rng = rng if rng is not None else np.random.default_rng()
    minority, majority = _as_points(minority), _as_points(majority)
    _check(minority, k, n_synthetic)
    if len(majority) == 0:
        raise TooFewPoints("borderline-SMOTE needs majority points")
    danger = np.flatnonzero(borderline_census(minority, majority, k) == DANGER)
    if len(danger) == 0:
        logger.info("no borderline minority points; falling back to SMOTE")
        return smote_with_parents(minority, k, n_synthetic, rng)
    if n_synthetic == 0:
        return smote_with_parents(minority, k, 0, rng)
    return _interpolate_from(minority, _cycled(danger, n_synthetic, rng), k, rng)


def borderline_smote(minority, majority, k: int = DEFAULT_K, n_synthetic: int = 0,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    return borderline_smote_with_parents(minority, majority, k, n_synthetic, rng).points


def adasyn_allocation(weights, n_synthetic: int) -> np.ndarray:
    """Children per point: ``round(w_i / sum(w) * n)``, corrected so the total is exactly ``n``.

    Missing children go to the highest-weight points, surplus is taken from the
    lowest-weight points that have any (ties: lower index first).
    """
    w = np.asarray(weights, dtype=np.float64)
    share = w / w.sum()
    counts = np.floor(share * n_synthetic + 0.5).astype(np.int64)
    diff = n_synthetic - int(counts.sum())
    by_weight = np.lexsort((np.arange(len(w)), -share))
    i = 0
    while diff > 0:
        counts[by_weight[i % len(w)]] += 1
        diff -= 1
        i += 1
    ascending = by_weight[::-1]
    i = 0
    while diff < 0:
        j = ascending[i % len(w)]
        if counts[j] > 0:
            counts[j] -= 1
            diff += 1
        i += 1
    return counts


def adasyn_with_parents(minority, majority, k: int = DEFAULT_K, n_synthetic: int = 0,
                        rng: np.random.Generator | None = None) -> Synthesis:
    rng = rng if rng is not None else np.random.default_rng()
    minority, majority = _as_points(minority), _as_points(majority)
    _check(minority, k, n_synthetic)
    if len(majority) == 0:
        raise TooFewPoints("ADASYN needs majority points")
    weights, _ = _majority_share(minority, majority, k)
    if weights.sum() == 0:
        logger.info("all ADASYN weights are zero; falling back to SMOTE")
        return smote_with_parents(minority, k, n_synthetic, rng)
    counts = adasyn_allocation(weights, n_synthetic)
    bases = np.repeat(np.arange(len(minority)), counts)
    return _interpolate_from(minority, bases, k, rng)


def adasyn(minority, majority, k: int = DEFAULT_K, n_synthetic: int = 0,
           rng: np.random.Generator | None = None) -> np.ndarray:
    return adasyn_with_parents(minority, majority, k, n_synthetic, rng).points


def oversample(train: ImageSet, method: str, minority_classes, k: int = DEFAULT_K,
               seed: int = 0) -> tuple[ImageSet, np.ndarray]:
    """Top every minority class up to the largest class count.

    Minority/majority for the borderline and adaptive methods is one class
    against the rest. Returns the augmented set and a per-row "synthetic" flag;
    synthetic rows get negative uids.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}")
    rng = np.random.default_rng(seed)
    shape = train.images.shape[1:]
    target = int(train.class_counts().max())
    images, labels = [train.images], [train.labels]
    for c in minority_classes:
        members = train.labels == c
        need = target - int(members.sum())
        if need <= 0:
            continue
        minority, rest = train.images[members], train.images[~members]
        if method == "smote":
            points = smote(minority, k, need, rng)
        elif method == "b-smote":
            points = borderline_smote(minority, rest, k, need, rng)
        else:
            points = adasyn(minority, rest, k, need, rng)
        images.append(points.reshape(-1, *shape).astype(np.float32))
        labels.append(np.full(need, c, dtype=np.int64))
    all_images = np.concatenate(images)
    n_syn = len(all_images) - len(train)
    uids = np.concatenate([train.uids, -1 - np.arange(n_syn)])
    flags = np.concatenate([np.zeros(len(train), bool), np.ones(n_syn, bool)])
    return ImageSet(all_images, np.concatenate(labels), train.num_classes, uids=uids,
                    class_names=train.class_names), flags
