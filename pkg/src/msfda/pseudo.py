"""Pseudo-label generation and target partitioning.

Per source model, classifier probabilities ``h`` are multiplied by a
prototype-distance distribution ``q`` to form confidence scores ``p``. The
scores of all models are fused with entropy-derived domain weights; the
fused maximum decides both the pseudo-label and whether the sample joins
the labeled subset.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .atomic import atomic_write_text
from .errors import NoValidPrototype, ValidationError
from .models import SourceModel

MIN_SOFT_MASS = 1e-9


@dataclass
class Prototypes:
    centroids: np.ndarray  # (K, feature_dim)
    valid: np.ndarray  # (K,) bool

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]

    def copy(self) -> "Prototypes":
        return Prototypes(self.centroids.copy(), self.valid.copy())


@dataclass
class Partition:
    """Split of the target set into pseudo-labeled and unlabeled indices.

    ``labels`` and ``scores`` cover every sample; only the labeled subset's
    labels are used for training. ``alpha`` is None when the split was not
    made by thresholding.
    """

    labeled: np.ndarray
    unlabeled: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    alpha: float | None

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def pseudo_labels(self) -> np.ndarray:
        return self.labels[self.labeled]

    def subset_tags(self) -> np.ndarray:
        tags = np.full(self.n, "U")
        tags[self.labeled] = "L"
        return tags


@dataclass(frozen=True)
class ScheduleParams:
    beta: float = 1.0
    gamma: float = 0.8

    def __post_init__(self):
        if self.beta <= 0:
            raise ValidationError("beta must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError("gamma must lie in (0, 1]")


# -- prototypes ---------------------------------------------------------------


def soft_prototypes(features: np.ndarray, probs: np.ndarray) -> Prototypes:
    mass = probs.sum(axis=0)
    valid = mass >= MIN_SOFT_MASS
    centroids = np.zeros((probs.shape[1], features.shape[1]))
    centroids[valid] = (probs[:, valid].T @ features) / mass[valid, None]
    return Prototypes(centroids, valid)


def bootstrap_prototypes(model: SourceModel, x: np.ndarray) -> Prototypes:
    """Soft centroids over all target data, weighted by the model's own predictions."""
    if len(x) == 0:
        raise ValidationError("target set is empty")
    f, h = model.features_and_proba(x)
    return soft_prototypes(f, h)


def hard_prototypes(
    features: np.ndarray, labels: np.ndarray, n_classes: int, previous: Prototypes | None = None
) -> Prototypes:
    if len(labels) == 0:
        raise ValidationError("labeled subset is empty; bootstrap prototypes instead")
    if previous is None:
        centroids = np.zeros((n_classes, features.shape[1]))
        valid = np.zeros(n_classes, dtype=bool)
    else:
        centroids, valid = previous.centroids.copy(), previous.valid.copy()
    for k in range(n_classes):
        members = labels == k
        if members.any():
            centroids[k] = features[members].mean(axis=0)
            valid[k] = True
    return Prototypes(centroids, valid)


def compute_prototypes(
    model: SourceModel, x_l: np.ndarray, y_l: np.ndarray, previous: Prototypes | None = None
) -> Prototypes:
    """Class means of the labeled subset's features; absent classes keep ``previous``."""
    return hard_prototypes(model.features(x_l), np.asarray(y_l), model.n_classes, previous)


def distribution_from_features(features: np.ndarray, protos: Prototypes, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    if not protos.valid.any():
        raise NoValidPrototype("no class has a valid prototype")
    dist = np.linalg.norm(features[:, None, :] - protos.centroids[None, :, :], axis=2)
    logits = np.where(protos.valid[None, :], -dist / temperature, -np.inf)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def prototype_distribution(
    model: SourceModel, protos: Prototypes, x: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """``q_k`` proportional to ``exp(-||f(x) - eta_k|| / temperature)`` over valid classes."""
    return distribution_from_features(model.features(x), protos, temperature)


def confidence_scores(
    model: SourceModel, protos: Prototypes, x: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    f, h = model.features_and_proba(x)
    return h * distribution_from_features(f, protos, temperature)


# -- domain weights -------------------------------------------------------------


def entropy(probs: np.ndarray) -> np.ndarray:
    """Row-wise natural-log entropy with ``0 log 0 = 0``."""
    p = np.asarray(probs)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=-1)


def entropy_softmax_weights(mean_entropies: Sequence[float]) -> np.ndarray:
    z = -np.asarray(mean_entropies, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def domain_weights(models: Sequence[SourceModel], x: np.ndarray) -> np.ndarray:
    if not models:
        raise ValidationError("need at least one source model")
    return entropy_softmax_weights([entropy(m.predict_proba(x)).mean() for m in models])


# -- fusion and splitting ---------------------------------------------------------


def argmax_first(values: np.ndarray) -> np.ndarray:
    """Row argmax; ties go to the smallest index (numpy's behaviour, pinned here)."""
    return np.argmax(values, axis=-1)


def model_scores(
    model: SourceModel,
    protos: Prototypes | None,
    x: np.ndarray,
    temperature: float = 1.0,
    denoise: bool = True,
) -> np.ndarray:
    """Per-model confidence ``p = h * q``.

    With ``denoise`` off, ``q`` is uniform. A model without any valid
    prototype contributes ``h`` on its own.
    """
    f, h = model.features_and_proba(x)
    if not denoise:
        return h / h.shape[1]
    if protos is None or not protos.valid.any():
        return h
    return h * distribution_from_features(f, protos, temperature)


def fuse_scores(per_model: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    fused = np.zeros_like(per_model[0])
    for w, p in zip(weights, per_model):
        fused += w * p
    return fused


def fuse_pseudo_label(
    models: Sequence[SourceModel],
    prototypes: Sequence[Prototypes | None],
    weights: np.ndarray,
    x: np.ndarray,
    temperature: float = 1.0,
    denoise: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(labels, scores, fused)`` for every row of ``x``."""
    per_model = [
        model_scores(m, p, x, temperature, denoise) for m, p in zip(models, prototypes)
    ]
    fused = fuse_scores(per_model, weights)
    return argmax_first(fused), fused.max(axis=1), fused


def partition(scores: np.ndarray, labels: np.ndarray, alpha: float) -> Partition:
    scores = np.asarray(scores, dtype=np.float64)
    mask = scores > alpha
    return Partition(
        labeled=np.flatnonzero(mask),
        unlabeled=np.flatnonzero(~mask),
        labels=np.asarray(labels, dtype=np.int64),
        scores=scores,
        alpha=float(alpha),
    )


def alpha_schedule(schedule: ScheduleParams, tau: int, scores: np.ndarray) -> float:
    """``beta * gamma**tau * mean(scores)`` with scores the fused per-sample maxima."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValidationError("need at least one score")
    if tau < 0:
        raise ValidationError("iteration index must be non-negative")
    return schedule.beta * schedule.gamma ** tau * float(scores.mean())


def partition_to_csv(part: Partition) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "subset", "pseudo_label", "fused_score", "alpha"])
    alpha = "NA" if part.alpha is None else repr(part.alpha)
    tags = part.subset_tags()
    for i in range(part.n):
        writer.writerow([i, tags[i], int(part.labels[i]) + 1, repr(float(part.scores[i])), alpha])
    return buf.getvalue()


def write_partition(part: Partition, path: str | Path) -> None:
    atomic_write_text(path, partition_to_csv(part))


def read_partition(path: str | Path) -> Partition:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty partition file")
    tags = np.array([r["subset"] for r in rows])
    alpha = rows[0]["alpha"]
    return Partition(
        labeled=np.flatnonzero(tags == "L"),
        unlabeled=np.flatnonzero(tags == "U"),
        labels=np.array([int(r["pseudo_label"]) - 1 for r in rows], dtype=np.int64),
        scores=np.array([float(r["fused_score"]) for r in rows]),
        alpha=None if alpha == "NA" else float(alpha),
    )
