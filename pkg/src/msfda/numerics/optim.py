"""SGD with momentum and coupled L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class OptimizerState:
    buffers: list[np.ndarray]
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], lr: float, momentum: float = 0.9,
                   weight_decay: float = 0.0) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], lr, momentum, weight_decay)


def sgd_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState
) -> tuple[list[np.ndarray], OptimizerState]:
    """One update: ``g' = g + wd*w``, ``v = mu*v + g'``, ``w = w - lr*v``.

    Returns new arrays; inputs are left untouched.
    """
    if not (len(params) == len(grads) == len(state.buffers)):
        raise ShapeError("params, grads and buffers must have equal length")
    new_params, new_bufs = [], []
    for w, g, v in zip(params, grads, state.buffers):
        if w.shape != g.shape or w.shape != v.shape:
            raise ShapeError(f"shape mismatch {w.shape} / {g.shape} / {v.shape}")
        g_eff = g + state.weight_decay * w
        v_new = state.momentum * v + g_eff
        new_params.append(w - state.lr * v_new)
        new_bufs.append(v_new)
    return new_params, OptimizerState(new_bufs, state.lr, state.momentum, state.weight_decay)
