"""Training objectives for adapting one source model's feature extractor.

The ``*_loss`` functions operate on tape tensors so they can be
differentiated; the plain-named wrappers evaluate them for a model and
return floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .models import SourceModel, disc_logits_tape, features_tape, proba_tape
from .numerics import MlpParams, Tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    im: float = 1.0
    adv: float = 1.0

    def __post_init__(self):
        if self.im < 0 or self.adv < 0:
            raise ValidationError("loss weights must be non-negative")


def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValidationError("cross-entropy needs a non-empty batch")
    picked = probs.take(np.arange(labels.size), labels)
    return -picked.log(PROB_FLOOR).mean()


def info_max_loss(probs: Tensor) -> Tensor:
    """Mean per-sample entropy minus the entropy of the mean prediction."""
    if probs.shape[0] == 0:
        raise ValidationError("information maximisation needs a non-empty batch")
    mean_entropy = -(probs * probs.log(PROB_FLOOR)).sum(axis=1).mean()
    p_bar = probs.mean(axis=0)
    return mean_entropy + (p_bar * p_bar.log(PROB_FLOOR)).sum()


def adversarial_loss(logits_l: Tensor, logits_u: Tensor | None) -> Tensor:
    """``E_l[log d] + E_u[log(1 - d)]`` from clamped discriminator logits.

    With no unlabeled batch the alignment term is defined as zero.
    """
    if logits_u is None or logits_u.shape[0] == 0:
        return Tensor(0.0)
    if logits_l.shape[0] == 0:
        raise ValidationError("adversarial loss needs a non-empty labeled batch")
    return logits_l.log_sigmoid().mean() + (-logits_u).log_sigmoid().mean()


def feature_objective(
    model: SourceModel,
    extractor: list[Tensor],
    disc: MlpParams | None,
    disc_arrays: list[Tensor] | None,
    x_l: np.ndarray,
    y_l: np.ndarray,
    x_u: np.ndarray | None,
    weights: LossWeights,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Joint extractor objective ``CE + lam_im * IM + lam_adv * ADV``.

    ``disc`` may be None (alignment disabled); the adversarial part is then 0.
    """
    f_l = features_tape(model, extractor, x_l)
    probs = proba_tape(model, f_l)
    ce = cross_entropy_loss(probs, y_l)
    im = info_max_loss(probs)
    adv = Tensor(0.0)
    if disc is not None and x_u is not None and len(x_u) > 0:
        f_u = features_tape(model, extractor, x_u)
        adv = adversarial_loss(
            disc_logits_tape(disc, disc_arrays, f_l), disc_logits_tape(disc, disc_arrays, f_u)
        )
    total = ce
    if weights.im:
        total = total + weights.im * im
    if weights.adv:
        total = total + weights.adv * adv
    return total, {"ce": ce, "im": im, "adv": adv}


# -- float-valued evaluations -------------------------------------------------


def _const(model: SourceModel) -> list[Tensor]:
    return [Tensor(a) for a in model.extractor.arrays()]


def cross_entropy(model: SourceModel, x: np.ndarray, labels: np.ndarray) -> float:
    probs = proba_tape(model, features_tape(model, _const(model), x))
    return cross_entropy_loss(probs, labels).item()


def info_max(model: SourceModel, x: np.ndarray) -> float:
    probs = proba_tape(model, features_tape(model, _const(model), x))
    return info_max_loss(probs).item()


def adversarial(model: SourceModel, disc: MlpParams, x_l: np.ndarray, x_u: np.ndarray | None) -> float:
    if x_u is None or len(x_u) == 0:
        return 0.0
    ext = _const(model)
    d = [Tensor(a) for a in disc.arrays()]
    z_l = disc_logits_tape(disc, d, features_tape(model, ext, x_l))
    z_u = disc_logits_tape(disc, d, features_tape(model, ext, x_u))
    return adversarial_loss(z_l, z_u).item()


def joint_feature_loss(
    model: SourceModel,
    disc: MlpParams | None,
    x_l: np.ndarray,
    y_l: np.ndarray,
    x_u: np.ndarray | None,
    weights: LossWeights = LossWeights(),
) -> float:
    d = None if disc is None else [Tensor(a) for a in disc.arrays()]
    total, _ = feature_objective(model, _const(model), disc, d, x_l, y_l, x_u, weights)
    return total.item()
