"""2-D principal-component projection of per-model target features."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

import numpy as np

from .atomic import atomic_write_text
from .data import Dataset
from .errors import ValidationError
from .models import SourceModel
from .pseudo import Partition


def pca_2d(features: np.ndarray) -> np.ndarray:
    """Project centred rows onto the top two principal axes.

    Each axis is oriented so its first non-negligible loading is positive;
    missing axes (rank < 2 or dim < 2) project to zero.
    """
    centred = features - features.mean(axis=0)
    out = np.zeros((features.shape[0], 2))
    if not np.any(centred):
        return out
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    tol = s[0] * max(centred.shape) * np.finfo(float).eps
    for i in range(min(2, vt.shape[0])):
        if s[i] <= tol:
            break
        axis = vt[i]
        lead = np.flatnonzero(np.abs(axis) > 1e-12)[0]
        if axis[lead] < 0:
            axis = -axis
        out[:, i] = centred @ axis
    return out


def embeddings_to_csv(
    models: Sequence[SourceModel], dataset: Dataset, part: Partition | None = None
) -> str:
    if dataset.n < 2:
        raise ValidationError("need at least two samples to project")
    truth = dataset.reveal_truth() if dataset.has_truth else dataset.labels
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "model", "pc1", "pc2", "subset", "pseudo_label", "true_label"])
    tags = part.subset_tags() if part is not None else None
    for model in models:
        proj = pca_2d(model.features(dataset.features))
        for i in range(dataset.n):
            writer.writerow([
                i,
                model.domain,
                repr(float(proj[i, 0])),
                repr(float(proj[i, 1])),
                tags[i] if tags is not None else "",
                int(part.labels[i]) + 1 if part is not None else "",
                int(truth[i]) + 1 if truth is not None else "",
            ])
    return buf.getvalue()


def export_embeddings(
    models: Sequence[SourceModel], dataset: Dataset, path: str | Path, part: Partition | None = None
) -> None:
    atomic_write_text(path, embeddings_to_csv(models, dataset, part))
