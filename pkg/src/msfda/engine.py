"""Selective pseudo-label adaptation of several source models to one target set."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .errors import ValidationError
from .losses import LossWeights, adversarial_loss, feature_objective
from .models import SourceModel, disc_logits_tape, init_discriminator
from .numerics import MlpParams, OptimizerState, Tensor, forward_mlp, grad, sgd_step
from .pseudo import (
    Partition,
    Prototypes,
    ScheduleParams,
    alpha_schedule,
    argmax_first,
    bootstrap_prototypes,
    compute_prototypes,
    domain_weights,
    fuse_pseudo_label,
    partition,
)
from .seeding import rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptationConfig:
    iterations: int = 20
    inner_epochs: int = 5
    batch_size: int = 32
    lr_extractor: float = 1e-2
    lr_discriminator: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3
    loss_weights: LossWeights = LossWeights()
    schedule: ScheduleParams = ScheduleParams()
    temperature: float = 1.0
    disc_hidden: int = 16
    seed: int = 0
    oracle_partition: bool = False
    ablate_alignment: bool = False
    ablate_denoise: bool = False
    # alpha = -inf: every target sample is pseudo-labeled
    unselective: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if self.inner_epochs < 0:
            raise ValidationError("inner_epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        for name in ("lr_extractor", "lr_discriminator", "temperature"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValidationError("momentum must lie in [0, 1) and weight_decay be >= 0")
        if self.oracle_partition and self.unselective:
            raise ValidationError("oracle_partition and unselective are exclusive")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


@dataclass
class IterationMetrics:
    iteration: int
    n_labeled: int
    n_unlabeled: int
    alpha: float | None
    losses: dict[str, dict[str, float]] = field(default_factory=dict)
    accuracy: float | None = None
    pseudo_accuracy: float | None = None
    pseudo_correct: int | None = None
    warning: str | None = None

    def to_record(self) -> dict:
        rec = asdict(self)
        if self.alpha is not None and not np.isfinite(self.alpha):
            rec["alpha"] = "-inf"
        return rec


@dataclass
class AdaptationResult:
    models: list[SourceModel]
    weights: np.ndarray
    metrics: list[IterationMetrics]
    partition: Partition


# -- prediction -----------------------------------------------------------------


def ensemble_proba(models: Sequence[SourceModel], weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    fused = np.zeros((len(x), models[0].n_classes))
    for w, m in zip(weights, models):
        fused += w * m.predict_proba(x)
    return fused


def ensemble_predict(
    models: Sequence[SourceModel], weights: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if len({m.n_classes for m in models}) != 1:
        raise ValidationError("models disagree on class count")
    fused = ensemble_proba(models, weights, x)
    return argmax_first(fused), fused


def evaluate(models: Sequence[SourceModel], weights: np.ndarray, dataset: Dataset) -> float:
    truth = dataset.reveal_truth() if dataset.has_truth else dataset.labels
    if truth is None:
        raise ValidationError("evaluation needs true labels")
    pred, _ = ensemble_predict(models, weights, dataset.features)
    return float(np.mean(pred == truth))


def oracle_partition(truth: np.ndarray | None, labels: np.ndarray, scores: np.ndarray) -> Partition:
    """Labeled subset = samples whose pseudo-label matches the hidden truth."""
    if truth is None:
        raise ValidationError("oracle partition needs hidden truth")
    correct = np.asarray(labels) == np.asarray(truth)
    return Partition(
        labeled=np.flatnonzero(correct),
        unlabeled=np.flatnonzero(~correct),
        labels=np.asarray(labels, dtype=np.int64),
        scores=np.asarray(scores, dtype=np.float64),
        alpha=None,
    )


# -- per-model training ---------------------------------------------------------


@dataclass
class _ModelState:
    model: SourceModel
    disc: MlpParams
    ext_opt: OptimizerState
    disc_opt: OptimizerState


def _paired_unlabeled(rng: np.random.Generator, pool: np.ndarray, size: int) -> np.ndarray:
    """Draw ``size`` unlabeled indices; resample with replacement when the pool is smaller."""
    if pool.size >= size:
        return rng.permutation(pool)[:size]
    return rng.choice(pool, size=size, replace=True)


def _full_set_losses(st: _ModelState, x, part: Partition, cfg: AdaptationConfig, align: bool) -> dict[str, float]:
    x_l = x[part.labeled]
    x_u = x[part.unlabeled] if align else None
    disc = st.disc if align else None
    d = [Tensor(a) for a in st.disc.arrays()] if align else None
    ext = [Tensor(a) for a in st.model.extractor.arrays()]
    total, parts = feature_objective(
        st.model, ext, disc, d, x_l, part.pseudo_labels, x_u, cfg.loss_weights
    )
    return {"joint": total.item(), **{k: v.item() for k, v in parts.items()}}


def _train_model(
    st: _ModelState, x: np.ndarray, part: Partition, cfg: AdaptationConfig, tau: int
) -> tuple[_ModelState, dict[str, float]]:
    model, disc = st.model, st.disc
    ext_opt, disc_opt = st.ext_opt, st.disc_opt
    align = not cfg.ablate_alignment and part.unlabeled.size > 0
    start = _full_set_losses(st, x, part, cfg, align)

    rng = rng_for(cfg.seed, "adapt", model.domain, tau)
    labeled = part.labeled
    n_l = labeled.size
    ext_params = model.extractor.arrays()
    disc_params = disc.arrays()
    sums = {"ce": 0.0, "im": 0.0, "adv": 0.0, "joint": 0.0}
    steps = 0

    for _ in range(cfg.inner_epochs):
        order = rng.permutation(labeled)
        u_order = _paired_unlabeled(rng, part.unlabeled, n_l) if align else None
        for b in range(0, n_l, cfg.batch_size):
            idx_l = order[b:b + cfg.batch_size]
            x_l, y_l = x[idx_l], part.labels[idx_l]
            x_u = x[u_order[b:b + cfg.batch_size]] if align else None

            if align:
                cur = model.extractor.with_arrays(ext_params)
                f_l = Tensor(forward_mlp(cur, x_l))
                f_u = Tensor(forward_mlp(cur, x_u))

                def disc_loss(*leaves):
                    d = list(leaves)
                    return adversarial_loss(
                        disc_logits_tape(disc, d, f_l), disc_logits_tape(disc, d, f_u)
                    )

                _, g = grad(disc_loss, disc_params)
                # ascent on the adversarial objective
                disc_params, disc_opt = sgd_step(disc_params, [-gi for gi in g], disc_opt)

            cur_disc = disc.with_arrays(disc_params) if align else None
            d_const = [Tensor(a) for a in disc_params] if align else None
            parts: dict[str, Tensor] = {}

            def ext_loss(*leaves):
                total, p = feature_objective(
                    model, list(leaves), cur_disc, d_const, x_l, y_l, x_u, cfg.loss_weights
                )
                parts.update(p)
                return total

            value, g = grad(ext_loss, ext_params)
            ext_params, ext_opt = sgd_step(ext_params, g, ext_opt)
            sums["joint"] += value
            for k in ("ce", "im", "adv"):
                sums[k] += parts[k].item()
            steps += 1

    new_state = _ModelState(
        model.with_extractor(model.extractor.with_arrays(ext_params)),
        disc.with_arrays(disc_params),
        ext_opt,
        disc_opt,
    )
    losses = {f"start_{k}": v for k, v in start.items()}
    losses.update({f"train_{k}": (v / steps if steps else 0.0) for k, v in sums.items()})
    losses["steps"] = steps
    return new_state, losses


# -- main loop --------------------------------------------------------------------


def _split(cfg: AdaptationConfig, tau: int, labels, scores, truth) -> Partition:
    if cfg.oracle_partition:
        return oracle_partition(truth, labels, scores)
    if cfg.unselective:
        return partition(scores, labels, -np.inf)
    return partition(scores, labels, alpha_schedule(cfg.schedule, tau, scores))


def adapt(
    models: Sequence[SourceModel],
    target: Dataset,
    config: AdaptationConfig = AdaptationConfig(),
    sink: Callable[[dict], None] | None = None,
) -> AdaptationResult:
    """Run the outer adaptation loop.

    Hidden truth on ``target`` is read only to score iterations and, in
    oracle mode, to pick the labeled subset. Each model trains from its own
    random stream keyed by (seed, domain, iteration), so scheduling order
    and ``workers`` do not change the result.
    """
    if not models:
        raise ValidationError("need at least one source model")
    if len({m.n_classes for m in models}) != 1:
        raise ValidationError("source models disagree on class count")
    if len({m.domain for m in models}) != len(models):
        raise ValidationError("source model domain ids must be unique")
    cfg = config
    truth = target.reveal_truth() if target.has_truth else None
    x = target.unlabeled().features
    denoise = not cfg.ablate_denoise

    models = [m.copy() for m in models]
    weights = domain_weights(models, x)
    protos: list[Prototypes | None] = (
        [bootstrap_prototypes(m, x) for m in models] if denoise else [None] * len(models)
    )
    labels, scores, _ = fuse_pseudo_label(models, protos, weights, x, cfg.temperature, denoise)

    states = []
    for m in models:
        disc = init_discriminator(m.feature_dim, rng_for(cfg.seed, "disc", m.domain), cfg.disc_hidden)
        states.append(
            _ModelState(
                m,
                disc,
                OptimizerState.zeros_like(m.extractor.arrays(), cfg.lr_extractor, cfg.momentum, cfg.weight_decay),
                OptimizerState.zeros_like(disc.arrays(), cfg.lr_discriminator, cfg.momentum, cfg.weight_decay),
            )
        )

    metrics: list[IterationMetrics] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for tau in range(1, cfg.iterations + 1):
            part = _split(cfg, tau, labels, scores, truth)
            warning = None
            if part.labeled.size == 0:
                warning = "empty labeled subset; updates skipped"
                log.warning("iteration %d: %s", tau, warning)
                losses = {st.model.domain: {} for st in states}
            else:
                jobs = [(st, x, part, cfg, tau) for st in states]
                if pool is not None:
                    results = list(pool.map(lambda a: _train_model(*a), jobs))
                else:
                    results = [_train_model(*a) for a in jobs]
                states = [r[0] for r in results]
                losses = {r[0].model.domain: r[1] for r in results}

            current = [st.model for st in states]
            if denoise:
                if part.labeled.size:
                    protos = [
                        compute_prototypes(m, x[part.labeled], part.pseudo_labels, previous=p)
                        for m, p in zip(current, protos)
                    ]
                else:
                    protos = [bootstrap_prototypes(m, x) for m in current]
            pseudo_ok = None
            if truth is not None and part.labeled.size:
                pseudo_ok = int(np.sum(part.pseudo_labels == truth[part.labeled]))
            labels, scores, _ = fuse_pseudo_label(current, protos, weights, x, cfg.temperature, denoise)

            acc = None
            if truth is not None:
                pred, _ = ensemble_predict(current, weights, x)
                acc = float(np.mean(pred == truth))
            m = IterationMetrics(
                iteration=tau,
                n_labeled=int(part.labeled.size),
                n_unlabeled=int(part.unlabeled.size),
                alpha=part.alpha,
                losses=losses,
                accuracy=acc,
                pseudo_accuracy=None if pseudo_ok is None else pseudo_ok / part.labeled.size,
                pseudo_correct=pseudo_ok,
                warning=warning,
            )
            metrics.append(m)
            if sink is not None:
                sink(m.to_record())
    finally:
        if pool is not None:
            pool.shutdown()

    final = _split(cfg, cfg.iterations, labels, scores, truth)
    return AdaptationResult([st.model for st in states], weights, metrics, final)
