"""Classification metrics, FID and feature export."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import ImageSet, to_nchw
from .errors import DegenerateFeatures, ValidationError

logger = logging.getLogger(__name__)

FID_SAMPLES_PER_CLASS = 1500


@dataclass
class MetricsRecord:
    """Scores for one evaluation; per-class lists are indexed by class."""

    confusion: np.ndarray
    precision: list[float]
    recall: list[float]
    f_score: list[float]
    macro_precision: float
    macro_recall: float
    macro_f: float
    fid: list[float] | None = None
    epoch: int | None = None
    grad_norms: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f": self.macro_f,
            "fid": self.fid,
        }


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def precision_recall(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Per-class precision and recall plus their macro (unweighted) means.

    A zero denominator yields 0 for that class.
    """
    cm = np.asarray(cm)
    if cm.size == 0:
        raise ValidationError("empty confusion matrix")
    diag = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    actual = cm.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(actual > 0, diag / actual, 0.0)
    if (predicted == 0).any():
        logger.info("classes %s never predicted; precision set to 0", np.flatnonzero(predicted == 0).tolist())
    if (actual == 0).any():
        logger.info("classes %s absent from evaluation set; recall set to 0", np.flatnonzero(actual == 0).tolist())
    return precision, recall, float(precision.mean()), float(recall.mean())


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def metrics_from_confusion(cm: np.ndarray, epoch: int | None = None) -> MetricsRecord:
    precision, recall, macro_p, macro_r = precision_recall(cm)
    per_class_f = [f_score(p, r) for p, r in zip(precision, recall)]
    return MetricsRecord(
        confusion=np.asarray(cm),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f_score=per_class_f,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f=float(np.mean(per_class_f)),
        epoch=epoch,
    )


@torch.no_grad()
def predict(classifier, images: np.ndarray, batch_size: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Argmax predictions and penultimate features for an (N, H, W, C) array."""
    was_training = classifier.training
    classifier.eval()
    dtype = next(classifier.parameters()).dtype
    preds, feats = [], []
    for start in range(0, len(images), batch_size):
        logits, features = classifier(to_nchw(images[start:start + batch_size], dtype))
        preds.append(logits.argmax(dim=1).numpy())
        feats.append(features.numpy())
    classifier.train(was_training)
    return np.concatenate(preds), np.concatenate(feats)


def evaluate_classifier(classifier, test: ImageSet, epoch: int | None = None) -> MetricsRecord:
    if len(test) == 0:
        raise ValidationError("empty test set")
    preds, _ = predict(classifier, test.images)
    return metrics_from_confusion(confusion_matrix(test.labels, preds, test.num_classes), epoch)


# -- FID ----------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "GaussianSummary":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValidationError("need at least two feature rows")
        with np.errstate(invalid="ignore"):
            cov = np.cov(features, rowvar=False).reshape(features.shape[1], features.shape[1])
        if not np.isfinite(cov).all():
            raise DegenerateFeatures("feature covariance is not finite")
        return cls(features.mean(axis=0), (cov + cov.T) / 2)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of (S_a S_b)^(1/2) equals that of (S_a^½ S_b S_a^½)^(1/2), which
    is symmetric PSD and handled by eigendecomposition.
    """
    root_a = _psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_cross)
    if value < -1e-6:
        logger.warning("FID evaluated to %.3g; clamped to 0", value)
    return max(value, 0.0)


def fid(real_features: np.ndarray, gen_features: np.ndarray) -> float:
    for name, f in (("real", real_features), ("generated", gen_features)):
        if len(f) < 2:
            raise ValidationError(f"{name} feature set needs >= 2 rows")
    return frechet_distance(GaussianSummary.fit(real_features), GaussianSummary.fit(gen_features))


@torch.no_grad()
def per_class_fid(feature_net, generator_net, real: ImageSet, classes: Sequence[int],
                  rng: torch.Generator, per_class: int = FID_SAMPLES_PER_CLASS,
                  batch_size: int = 250) -> list[float]:
    """FID per class between actual images and an equal number of generated ones."""
    was_training = generator_net.training
    generator_net.eval()
    dtype = next(generator_net.parameters()).dtype
    noise_dim = generator_net.profile.noise_dim
    out = []
    for c in classes:
        idx = np.flatnonzero(real.labels == c)[:per_class]
        if len(idx) < per_class:
            logger.warning("class %d has %d actual images for FID (wanted %d)", c, len(idx), per_class)
        _, real_feats = predict(feature_net, real.images[idx])
        gen_feats = []
        for start in range(0, len(idx), batch_size):
            n = min(batch_size, len(idx) - start)
            z = torch.randn(n, noise_dim, generator=rng, dtype=dtype)
            y = torch.zeros(n, real.num_classes, dtype=dtype)
            y[:, c] = 1
            images = generator_net(z, y)
            _, feats = feature_net(images.to(next(feature_net.parameters()).dtype))
            gen_feats.append(feats.numpy())
        out.append(fid(real_feats, np.concatenate(gen_feats)))
    generator_net.train(was_training)
    return out


# -- feature export ----------------------------------------------------------


def export_features(classifier, images: np.ndarray, labels: Sequence[int], generated: Sequence[bool],
                    path: str | Path) -> Path:
    """Write one tab-separated row per sample: features..., label, origin."""
    if len(images) == 0:
        raise ValidationError("nothing to export")
    if not (len(images) == len(labels) == len(generated)):
        raise ValidationError("images, labels and origin flags differ in length")
    _, feats = predict(classifier, np.asarray(images, dtype=np.float32))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        dim = feats.shape[1]
        fh.write("\t".join([f"f{i}" for i in range(dim)] + ["label", "origin"]) + "\n")
        for row, lab, gen in zip(feats, labels, generated):
            fh.write("\t".join(repr(float(v)) for v in row))
            fh.write(f"\t{int(lab)}\t{'generated' if gen else 'actual'}\n")
    return path


def read_features(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path) as fh:
        fh.readline()
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    feats = np.array([[float(v) for v in r[:-2]] for r in rows])
    labels = np.array([int(r[-2]) for r in rows])
    return feats, labels, [r[-1] for r in rows]
