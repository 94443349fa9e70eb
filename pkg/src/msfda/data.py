"""Datasets: seeded synthetic domain families, CSV ingest/export, source pretraining."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .atomic import atomic_write_text
from .errors import ParseError, SchemaError, ValidationError
from .models import SourceModel
from .numerics import OptimizerState, grad, init_mlp, sgd_step
from .numerics.mlp import apply_mlp
from .numerics.tensor import Tensor
from .losses import cross_entropy_loss
from .seeding import rng_for


@dataclass
class Dataset:
    """Feature matrix with optional labels.

    Labels are stored 0-based (``0..K-1``); files use ``1..K``. A target set
    keeps its true labels in a private slot reachable only through
    :meth:`reveal_truth`, and :meth:`unlabeled` strips them entirely.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    domain: str = ""
    n_classes: int | None = None
    _truth: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValidationError("dataset needs an (n >= 1, d) feature matrix")
        for name in ("labels", "_truth"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.int64)
            if arr.shape != (self.n,):
                raise ValidationError(f"{name.strip('_')} must have one entry per row")
            if arr.min() < 0 or (self.n_classes is not None and arr.max() >= self.n_classes):
                raise ValidationError(f"{name.strip('_')} out of range")
            setattr(self, name, arr)
        if self.n_classes is None:
            present = [a for a in (self.labels, self._truth) if a is not None]
            if present:
                self.n_classes = int(max(a.max() for a in present)) + 1

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_truth(self) -> bool:
        return self._truth is not None

    def reveal_truth(self) -> np.ndarray:
        if self._truth is None:
            raise ValidationError(f"dataset {self.domain!r} carries no hidden truth")
        return self._truth

    def unlabeled(self) -> "Dataset":
        return Dataset(self.features, None, self.domain, self.n_classes)

    def equals(self, other: "Dataset") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.domain == other.domain
            and same(self.features, other.features)
            and same(self.labels, other.labels)
            and same(self._truth, other._truth)
        )


# -- synthetic domains ---------------------------------------------------------


@dataclass(frozen=True)
class BaseMixture:
    """Class-conditional isotropic Gaussians shared by every domain."""

    means: tuple[tuple[float, ...], ...]
    scale: float = 0.5

    def __post_init__(self):
        m = np.asarray(self.means, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2:
            raise ValidationError("need at least two class means")
        if len({tuple(r) for r in m.tolist()}) != m.shape[0]:
            raise ValidationError("class means must be distinct")
        if self.scale <= 0:
            raise ValidationError("covariance scale must be positive")

    @property
    def n_classes(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return len(self.means[0])

    @classmethod
    def on_circle(cls, n_classes: int = 3, radius: float = 2.0, scale: float = 0.5) -> "BaseMixture":
        angles = [2 * math.pi * k / n_classes for k in range(n_classes)]
        return cls(tuple((radius * math.cos(a), radius * math.sin(a)) for a in angles), scale)


@dataclass(frozen=True)
class DomainSpec:
    domain: str
    mixture: BaseMixture
    rotation: float = 0.0
    translation: tuple[float, ...] | None = None
    noise: float = 0.0
    label_noise: float = 0.0
    samples: int = 300

    def validate(self) -> None:
        if self.samples < 1:
            raise ValidationError(f"domain {self.domain!r}: samples must be >= 1")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValidationError(f"domain {self.domain!r}: label_noise must lie in [0, 0.5)")
        if self.noise < 0:
            raise ValidationError(f"domain {self.domain!r}: noise must be non-negative")
        if self.translation is not None and len(self.translation) != self.mixture.dim:
            raise ValidationError(f"domain {self.domain!r}: translation has wrong length")


def rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians in the plane of the first two axes."""
    r = np.eye(dim)
    if dim >= 2:
        c, s = math.cos(angle), math.sin(angle)
        r[:2, :2] = [[c, -s], [s, c]]
    return r


def sample_domain(spec: DomainSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    spec.validate()
    rng = rng_for(seed, "domain", spec.domain)
    mix = spec.mixture
    k, d = mix.n_classes, mix.dim
    y = rng.permutation(np.arange(spec.samples) % k)
    x = np.asarray(mix.means)[y] + mix.scale * rng.standard_normal((spec.samples, d))
    x = x @ rotation_matrix(d, spec.rotation).T
    if spec.translation is not None:
        x = x + np.asarray(spec.translation, dtype=np.float64)
    if spec.noise > 0:
        x = x + spec.noise * rng.standard_normal((spec.samples, d))
    if spec.label_noise > 0:
        flip = rng.random(spec.samples) < spec.label_noise
        shift = rng.integers(1, k, size=spec.samples)
        y = np.where(flip, (y + shift) % k, y)
    return x, y


def generate_multi_source(specs: Sequence[DomainSpec], seed: int) -> tuple[list[Dataset], Dataset]:
    """Sample every domain; the last spec is the target.

    Sources come back labelled. The target's labels are held only as hidden
    truth.
    """
    if len(specs) < 2:
        raise ValidationError("need at least one source and one target spec")
    dims = {(s.mixture.dim, s.mixture.n_classes) for s in specs}
    if len(dims) != 1:
        raise ValidationError("all domains must share feature dim and class count")
    if len({s.domain for s in specs}) != len(specs):
        raise ValidationError("domain ids must be unique")
    k = specs[0].mixture.n_classes
    sources = []
    for spec in specs[:-1]:
        x, y = sample_domain(spec, seed)
        sources.append(Dataset(x, y, spec.domain, k))
    x, y = sample_domain(specs[-1], seed)
    target = Dataset(x, None, specs[-1].domain, k, _truth=y)
    return sources, target


# -- CSV --------------------------------------------------------------------------


def _sort_key_values(values: set[str]) -> list[str]:
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


def load_csv(
    path: str | Path,
    feature_columns: Sequence[str] | None = None,
    label_column: str | None = "label",
    domain_column: str | None = "domain",
    *,
    labels_as_truth: bool = False,
    domain: str | None = None,
) -> Dataset:
    """Read a UTF-8 CSV with a header row.

    ``feature_columns`` defaults to every ``f<i>`` column in index order.
    Distinct label values map to 0-based classes by sorted order (numeric
    order when every value parses as a number, lexical otherwise).
    ``labels_as_truth`` stores labels as hidden truth, as for a target set.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    col = {name: i for i, name in enumerate(header)}
    if feature_columns is None:
        feature_columns = sorted(
            (h for h in header if h.startswith("f") and h[1:].isdigit()), key=lambda h: int(h[1:])
        )
        if not feature_columns:
            raise SchemaError(f"{path}: no feature columns f0..f<d-1>")
    for name in feature_columns:
        if name not in col:
            raise SchemaError(f"{path}: missing column {name!r}")
    has_label = label_column is not None and label_column in col
    has_domain = domain_column is not None and domain_column in col

    if has_domain and domain is not None:
        rows = [r for r in rows if r[col[domain_column]] == domain]
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    feats = np.empty((len(rows), len(feature_columns)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=i + 1)
        for j, name in enumerate(feature_columns):
            try:
                feats[i, j] = float(row[col[name]])
            except ValueError:
                raise ParseError(f"non-numeric value {row[col[name]]!r} in {name!r}", row=i + 1) from None
    if not np.all(np.isfinite(feats)):
        raise ParseError("non-finite feature value")

    labels = None
    n_classes = None
    if has_label:
        raw = [r[col[label_column]] for r in rows]
        order = _sort_key_values(set(raw))
        index = {v: k for k, v in enumerate(order)}
        labels = np.array([index[v] for v in raw], dtype=np.int64)
        n_classes = len(order)

    if domain is None:
        if has_domain:
            ids = {r[col[domain_column]] for r in rows}
            if len(ids) > 1:
                raise SchemaError(f"{path}: several domains {sorted(ids)}; pass domain=")
            domain = ids.pop()
        else:
            domain = Path(path).stem
    if labels_as_truth:
        return Dataset(feats, None, domain, n_classes, _truth=labels)
    return Dataset(feats, labels, domain, n_classes)


def dataset_to_csv(ds: Dataset, include_truth: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    labels = ds.labels
    if labels is None and include_truth and ds.has_truth:
        labels = ds.reveal_truth()
    header = [f"f{j}" for j in range(ds.dim)]
    if labels is not None:
        header.append("label")
    header.append("domain")
    writer.writerow(header)
    for i in range(ds.n):
        row = [repr(float(v)) for v in ds.features[i]]
        if labels is not None:
            row.append(str(int(labels[i]) + 1))
        row.append(ds.domain)
        writer.writerow(row)
    return buf.getvalue()


def write_csv(ds: Dataset, path: str | Path, include_truth: bool = True) -> None:
    atomic_write_text(path, dataset_to_csv(ds, include_truth))


# -- source pretraining -----------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    hidden: int = 64
    feature_dim: int = 16


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-3


def pretrain_source(
    dataset: Dataset,
    arch: Architecture = Architecture(),
    config: PretrainConfig = PretrainConfig(),
    seed: int = 0,
) -> SourceModel:
    """Fit extractor and classifier jointly by cross-entropy on a labelled source set."""
    if dataset.labels is None:
        raise ValidationError(f"source dataset {dataset.domain!r} is unlabeled")
    k = dataset.n_classes or 0
    if k < 2:
        raise ValidationError("pretraining needs at least two classes")
    rng = rng_for(seed, "pretrain", dataset.domain)
    extractor = init_mlp([dataset.dim, arch.hidden, arch.feature_dim], rng)
    classifier = init_mlp([arch.feature_dim, k], rng)
    n_ext = len(extractor.arrays())
    params = extractor.arrays() + classifier.arrays()
    state = OptimizerState.zeros_like(params, config.lr, config.momentum, config.weight_decay)
    acts_e, acts_c = extractor.activations, classifier.activations

    x_all, y_all = dataset.features, dataset.labels
    for _ in range(config.epochs):
        order = rng.permutation(dataset.n)
        for start in range(0, dataset.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = x_all[idx], y_all[idx]

            def loss(*leaves):
                f = apply_mlp(acts_e, list(leaves[:n_ext]), Tensor(x))
                probs = apply_mlp(acts_c, list(leaves[n_ext:]), f).softmax()
                return cross_entropy_loss(probs, y)

            _, grads = grad(loss, params)
            params, state = sgd_step(params, grads, state)

    return SourceModel(
        extractor.with_arrays(params[:n_ext]),
        classifier.with_arrays(params[n_ext:]),
        dataset.domain,
        k,
    )
