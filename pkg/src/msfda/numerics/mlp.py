"""Small fully connected networks: parameters, initialisation, forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor

ACTIVATIONS = ("relu", "identity")


@dataclass
class MlpParams:
    """Layer stack ``x -> act(x @ W + b)``; the last layer is always affine.

    ``weights[i]`` has shape ``(in_dim, out_dim)`` and ``biases[i]`` shape
    ``(out_dim,)``. ``activations`` carries one tag per layer.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.activations:
            self.activations = ["relu"] * (len(self.weights) - 1) + ["identity"]
        self.validate()

    def validate(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("need one bias per weight matrix")
        if len(self.activations) != len(self.weights):
            raise ShapeError("need one activation tag per layer")
        if self.activations[-1] != "identity":
            raise ShapeError("output layer must be affine")
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {tag!r}")
        prev = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"bad layer shapes {w.shape} / {b.shape}")
            if prev is not None and w.shape[0] != prev:
                raise ShapeError(f"layer expects {w.shape[0]} inputs, got {prev}")
            prev = w.shape[1]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Flat ``[W0, b0, W1, b1, ...]`` view, in the order gradients use."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), list(self.activations))

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def equals(self, other: "MlpParams") -> bool:
        """Bit-for-bit equality of every parameter entry."""
        return self.activations == other.activations and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays())
        )


def init_mlp(dims: list[int], rng: np.random.Generator) -> MlpParams:
    """Uniform(+-1/sqrt(fan_in)) init, rectifier on every hidden layer."""
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ShapeError(f"invalid layer dims {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def apply_mlp(activations: list[str], arrays: list[Tensor], x: Tensor) -> Tensor:
    """Differentiable forward pass over tape tensors ``[W0, b0, W1, b1, ...]``."""
    h = x
    for i, tag in enumerate(activations):
        h = h @ arrays[2 * i] + arrays[2 * i + 1]
        if tag == "relu":
            h = h.relu()
    return h


def forward_mlp(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"expected (batch, {params.in_dim}) input, got {x.shape}")
    out = apply_mlp(params.activations, [Tensor(a) for a in params.arrays()], Tensor(x))
    return out.data
