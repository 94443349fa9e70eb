"""Exact checks of the bias/variance analysis on finite label problems.

Everything here works on small discrete instances: a target marginal over a
finite input set, target and source conditionals over ``K`` classes, and
optionally a region of inputs that receive pseudo-labels. Risks use the
zero-one loss and are computed by exact summation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError

SIMPLEX_TOL = 1e-12
NORMALISED_TOL = 1e-9
MAX_ENUMERATED = 10**6
SAMPLED_HYPOTHESES = 10**5


def _check_simplex(arr: np.ndarray, what: str, tol: float = SIMPLEX_TOL) -> None:
    if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > tol):
        raise ValidationError(f"{what} is not a probability distribution")


@dataclass
class DiscreteInstance:
    marginal: np.ndarray  # (X,)
    target: np.ndarray  # (X, K) row-stochastic
    sources: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))  # (m, X, K)
    region: np.ndarray | None = None  # (X,) bool

    def __post_init__(self):
        self.marginal = np.asarray(self.marginal, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.sources = np.asarray(self.sources, dtype=np.float64)
        if self.sources.size == 0:
            self.sources = np.zeros((0,) + self.target.shape)
        if self.region is not None:
            self.region = np.asarray(self.region, dtype=bool)
        self.validate()

    @property
    def x_size(self) -> int:
        return self.marginal.size

    @property
    def n_classes(self) -> int:
        return self.target.shape[1]

    def validate(self) -> None:
        x, k = self.marginal.size, self.target.shape[-1]
        if not 1 <= x <= 16 or not 2 <= k <= 4:
            raise ValidationError("instances need |X| <= 16 and 2 <= K <= 4")
        if self.target.shape != (x, k) or self.sources.shape[1:] != (x, k):
            raise ValidationError("conditional shapes must be (|X|, K)")
        if self.region is not None and self.region.shape != (x,):
            raise ValidationError("region must be a boolean mask over X")
        _check_simplex(self.marginal, "marginal")
        _check_simplex(self.target, "target conditional")
        for j, s in enumerate(self.sources):
            _check_simplex(s, f"source {j} conditional")

    def target_joint(self) -> np.ndarray:
        return self.marginal[:, None] * self.target

    def source_joint(self, j: int) -> np.ndarray:
        """Target inputs labelled by source ``j``: marginal times source conditional."""
        return self.marginal[:, None] * self.sources[j]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.marginal, self.target, self.sources):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if self.region is not None:
            h.update(self.region.tobytes())
        return h.hexdigest()[:16]


def joint_digest(*joints: np.ndarray) -> str:
    """Short content hash of one or more joint tables."""
    h = hashlib.sha256()
    for arr in joints:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


# -- divergences ------------------------------------------------------------------


def kl_joint(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p log(p/q)`` in nats, ``0 log 0 = 0``; infinite off q's support."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValidationError("distributions must have the same shape")
    for name, d in (("P", p), ("Q", q)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > NORMALISED_TOL:
            raise ValidationError(f"{name} is not normalised")
    support = p > 0
    if np.any(support & (q <= 0)):
        return math.inf
    # rounding can push an exact zero slightly negative
    return max(0.0, float(np.sum(p[support] * np.log(p[support] / q[support]))))


def unselective_bias(inst: DiscreteInstance, source: int = 0) -> float:
    """Conditional KL of source vs target labels, averaged over the target marginal."""
    ps, pt, px = inst.sources[source], inst.target, inst.marginal
    total = 0.0
    for x in range(inst.x_size):
        if px[x] == 0:
            continue
        row = 0.0
        for y in range(inst.n_classes):
            if ps[x, y] == 0:
                continue
            if pt[x, y] == 0:
                return math.inf
            row += ps[x, y] * math.log(ps[x, y] / pt[x, y])
        total += px[x] * row
    return total


def restricted_joint(inst: DiscreteInstance, source: int = 0) -> np.ndarray:
    """Joint of pseudo-labelled data: marginal restricted to the region and renormalised, source labels."""
    if inst.region is None:
        raise ValidationError("instance has no pseudo-labelling region")
    mass = float(inst.marginal[inst.region].sum())
    if mass <= 0:
        raise ValidationError("pseudo-labelling region has zero target mass")
    px = np.where(inst.region, inst.marginal, 0.0) / mass
    return px[:, None] * inst.sources[source]


def selective_bias(inst: DiscreteInstance, source: int = 0) -> tuple[float, float]:
    """Closed-form bias ``-log P(region)`` and its bound term ``sqrt(bias / 2)``.

    Source and target conditionals must agree on the region (to 1e-9).
    """
    if inst.region is None or not inst.region.any():
        raise ValidationError("pseudo-labelling region is empty")
    mass = float(inst.marginal[inst.region].sum())
    if mass <= 0:
        raise ValidationError("pseudo-labelling region has zero target mass")
    diff = np.abs(inst.sources[source][inst.region] - inst.target[inst.region])
    if diff.size and diff.max() > NORMALISED_TOL:
        raise ValidationError("source and target conditionals differ inside the region")
    value = max(0.0, -math.log(mass))  # mass can round a hair above 1
    return value, math.sqrt(0.5 * value)


# -- bias inequality --------------------------------------------------------------


def zero_one_risk(joint: np.ndarray, hypothesis: np.ndarray) -> float:
    joint = np.asarray(joint)
    return float(1.0 - joint[np.arange(joint.shape[0]), hypothesis].sum())


@dataclass
class BiasReport:
    max_violation: float
    max_gap: float
    bound: float
    kl: float
    checked: int
    exhaustive: bool

    @property
    def passed(self) -> bool:
        return self.max_violation <= 1e-12

    @property
    def trivial(self) -> bool:
        return math.isinf(self.kl)


def _all_hypothesis_gaps(delta: np.ndarray) -> np.ndarray:
    """Risk gap for every labelling map, in lexicographic order of ``(h(0), h(1), ...)``."""
    gaps = delta[0].copy()
    for row in delta[1:]:
        gaps = (gaps[:, None] + row[None, :]).ravel()
    return gaps


def bias_bound_check(
    target_joint: np.ndarray,
    labeled_joint: np.ndarray,
    rng: np.random.Generator | None = None,
    max_enumerated: int = MAX_ENUMERATED,
    n_sampled: int = SAMPLED_HYPOTHESES,
) -> BiasReport:
    """Check ``L(h, target) - L(h, labeled) <= sqrt(KL(labeled || target) / 2)`` for every ``h``.

    All ``K**|X|`` labelling maps are enumerated when that count is at most
    ``max_enumerated``; otherwise ``n_sampled`` maps are drawn uniformly.
    """
    pt = np.asarray(target_joint, dtype=np.float64)
    pl = np.asarray(labeled_joint, dtype=np.float64)
    kl = kl_joint(pl, pt)
    bound = math.sqrt(0.5 * kl) if math.isfinite(kl) else math.inf
    x, k = pt.shape
    # L(h, target) - L(h, labeled) = sum_x [labeled(x, h(x)) - target(x, h(x))]
    delta = pl - pt
    if k ** x <= max_enumerated:
        gaps = _all_hypothesis_gaps(delta)
        exhaustive = True
    else:
        rng = rng or np.random.default_rng(0)
        hyps = rng.integers(0, k, size=(n_sampled, x))
        gaps = delta[np.arange(x)[None, :], hyps].sum(axis=1)
        exhaustive = False
    max_gap = float(gaps.max())
    violation = -math.inf if math.isinf(bound) else max_gap - bound
    return BiasReport(violation, max_gap, bound, kl, int(gaps.size), exhaustive)


# -- variance -------------------------------------------------------------------------


def variance_decay_sim(
    labeled_joint: np.ndarray,
    n_grid: Sequence[int],
    trials: int,
    seed: int,
    hypothesis: np.ndarray | None = None,
) -> dict[int, float]:
    """95th percentile of ``|empirical risk - population risk|`` for each sample size.

    Each trial draws ``n`` i.i.d. pairs from ``labeled_joint``. The reference
    hypothesis defaults to the joint's per-input argmax label.
    """
    p = np.asarray(labeled_joint, dtype=np.float64)
    if min(n_grid) < 10 or trials < 200:
        raise ValidationError("need sample sizes >= 10 and trials >= 200")
    if hypothesis is None:
        hypothesis = np.argmax(p, axis=1)
    population = zero_one_risk(p, hypothesis)
    correct = np.zeros_like(p, dtype=bool)
    correct[np.arange(p.shape[0]), hypothesis] = True
    flat_p, flat_ok = p.ravel(), correct.ravel()
    flat_p = flat_p / flat_p.sum()
    rng = np.random.default_rng(seed)
    out = {}
    for n in n_grid:
        counts = rng.multinomial(n, flat_p, size=trials)
        empirical = 1.0 - counts[:, flat_ok].sum(axis=1) / n
        out[int(n)] = float(np.percentile(np.abs(empirical - population), 95))
    return out


# -- majority vote ----------------------------------------------------------------------


def majority_vote_check(inst: DiscreteInstance, region: np.ndarray | None = None) -> tuple[float, float]:
    """Returns ``(satisfied fraction, coverage)`` over ``region`` (default: all inputs).

    An input is covered when one label is the argmax of more than half the
    sources; it is satisfied when that label is also the target argmax. The
    fraction is taken over covered inputs and is NaN when none are covered.
    """
    m = inst.sources.shape[0]
    if m < 1:
        raise ValidationError("need at least one source conditional")
    if region is None:
        region = inst.region if inst.region is not None else np.ones(inst.x_size, dtype=bool)
    xs = np.flatnonzero(region)
    votes = np.argmax(inst.sources, axis=2)  # (m, X)
    truth = np.argmax(inst.target, axis=1)
    covered = satisfied = 0
    for x in xs:
        counts = np.bincount(votes[:, x], minlength=inst.n_classes)
        winner = int(np.argmax(counts))
        if counts[winner] * 2 > m:
            covered += 1
            satisfied += int(winner == truth[x])
    fraction = satisfied / covered if covered else math.nan
    coverage = covered / xs.size if xs.size else 0.0
    return fraction, coverage


# -- random instances ---------------------------------------------------------------------


def random_simplex(rng: np.random.Generator, shape: tuple[int, ...], sparsity: float = 0.0) -> np.ndarray:
    """Dirichlet(1) rows; with ``sparsity`` > 0 some entries are zeroed (one kept per row)."""
    arr = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if sparsity > 0:
        mask = rng.random(arr.shape) < sparsity
        keep = rng.integers(0, shape[-1], size=shape[:-1])
        np.put_along_axis(mask, keep[..., None], False, axis=-1)
        arr = np.where(mask, 0.0, arr)
        arr = arr / arr.sum(axis=-1, keepdims=True)
    return arr


def random_instance(
    rng: np.random.Generator, x_size: int, n_classes: int, n_sources: int = 1, sparsity: float = 0.0
) -> DiscreteInstance:
    """Random instance whose sources match the target on a random non-empty region."""
    marginal = random_simplex(rng, (x_size,))
    target = random_simplex(rng, (x_size, n_classes), sparsity)
    region = rng.random(x_size) < 0.6
    region[rng.integers(x_size)] = True
    sources = random_simplex(rng, (n_sources, x_size, n_classes), sparsity)
    sources[:, region] = target[region]
    return DiscreteInstance(marginal, target, sources, region)


def random_joint_pair(rng: np.random.Generator, x_size: int, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """A (target, labeled) joint pair drawn from one of several constructions.

    Mixes unrelated joints, sparse joints, restricted-region joints and small
    perturbations of the target, the last being where the bound is tightest.
    """
    kind = int(rng.integers(4))
    if kind == 3:
        inst = random_instance(rng, x_size, n_classes, 1, sparsity=0.3)
        return inst.target_joint(), restricted_joint(inst)
    sparsity = 0.3 if kind == 1 else 0.0
    pt = random_simplex(rng, (x_size * n_classes,), sparsity).reshape(x_size, n_classes)
    if kind == 2:
        eps = 10 ** rng.uniform(-4, -0.5)
        pl = (1 - eps) * pt + eps * random_simplex(rng, (x_size * n_classes,)).reshape(x_size, n_classes)
    else:
        pl = random_simplex(rng, (x_size * n_classes,), sparsity).reshape(x_size, n_classes)
    return pt, pl / pl.sum()
