"""Source models (trainable extractor + frozen classifier) and discriminators."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atomic import atomic_write_bytes
from .errors import ValidationError
from .numerics import MlpParams, Tensor, apply_mlp, forward_mlp, init_mlp, softmax_rows
from .numerics.io import read_record, write_record

# logit clamp keeping log d and log(1 - d) finite
DISC_LOGIT_CLAMP = 30.0


@dataclass
class SourceModel:
    extractor: MlpParams
    classifier: MlpParams
    domain: str
    n_classes: int

    def __post_init__(self):
        if self.classifier.in_dim != self.extractor.out_dim:
            raise ValidationError("classifier input must match feature dim")
        if self.classifier.out_dim != self.n_classes:
            raise ValidationError("classifier output must match class count")

    @property
    def feature_dim(self) -> int:
        return self.extractor.out_dim

    def features(self, x: np.ndarray) -> np.ndarray:
        return forward_mlp(self.extractor, x)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax_rows(forward_mlp(self.classifier, self.features(x)))

    def features_and_proba(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = self.features(x)
        return f, softmax_rows(forward_mlp(self.classifier, f))

    def with_extractor(self, extractor: MlpParams) -> "SourceModel":
        return SourceModel(extractor, self.classifier, self.domain, self.n_classes)

    def copy(self) -> "SourceModel":
        return SourceModel(self.extractor.copy(), self.classifier.copy(), self.domain, self.n_classes)

    def save(self, path: str | Path) -> None:
        buf = io.BytesIO()
        meta = {"domain": self.domain, "n_classes": self.n_classes}
        write_record(buf, self.extractor, {**meta, "part": "extractor"})
        write_record(buf, self.classifier, {**meta, "part": "classifier"})
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "SourceModel":
        with open(path, "rb") as fh:
            extractor, meta = read_record(fh)
            classifier, _ = read_record(fh)
        return cls(extractor, classifier, meta["domain"], int(meta["n_classes"]))


def features_tape(model: SourceModel, extractor: list[Tensor], x: np.ndarray) -> Tensor:
    return apply_mlp(model.extractor.activations, extractor, Tensor(x))


def proba_tape(model: SourceModel, features: Tensor) -> Tensor:
    """Class probabilities through the frozen classifier (no gradient to it)."""
    frozen = [Tensor(a) for a in model.classifier.arrays()]
    return apply_mlp(model.classifier.activations, frozen, features).softmax()


def init_discriminator(feature_dim: int, rng: np.random.Generator, hidden: int = 16) -> MlpParams:
    return init_mlp([feature_dim, hidden, 1], rng)


def disc_logits_tape(disc: MlpParams, disc_arrays: list[Tensor], features: Tensor) -> Tensor:
    """Clamped discriminator logits, shape ``(batch,)``."""
    out = apply_mlp(disc.activations, disc_arrays, features)
    return out.clamp(-DISC_LOGIT_CLAMP, DISC_LOGIT_CLAMP).sum(axis=1)


def disc_prob(disc: MlpParams, features: np.ndarray) -> np.ndarray:
    z = np.clip(forward_mlp(disc, features)[:, 0], -DISC_LOGIT_CLAMP, DISC_LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))
