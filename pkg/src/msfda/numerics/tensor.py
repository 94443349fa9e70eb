"""
Minimal reverse-mode differentiation over float64 numpy arrays.

Only the operations the training losses need are provided: affine maps,
the rectifier, row softmax, floored logs, clamped log-sigmoid, elementwise
arithmetic and reductions. Every op records a closure that maps the output
gradient to parent gradients; ``backward`` walks the tape in reverse
topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], tuple] | None = None,
    ):
        arr = np.asarray(data)
        # extended precision passes through so finite differences can use it
        self.data = arr if arr.dtype == np.longdouble else arr.astype(np.float64, copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(data, parents: tuple["Tensor", ...], backward) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward)
        return Tensor(data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # -- elementwise arithmetic -----------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        a, b = self.shape, other.shape

        def back(g):
            return _unbroadcast(g, a), _unbroadcast(g, b)

        return Tensor._make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        x, y = self.data, other.data

        def back(g):
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

        return Tensor._make(x * y, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        x, y = self.data, other.data

        def back(g):
            return (
                _unbroadcast(g / y, x.shape),
                _unbroadcast(-g * x / (y * y), y.shape),
            )

        return Tensor._make(x / y, (self, other), back)

    def __matmul__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        x, y = self.data, other.data
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ShapeError(f"cannot multiply {x.shape} by {y.shape}")

        def back(g):
            return g @ y.T, x.T @ g

        return Tensor._make(x @ y, (self, other), back)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- nonlinearities -------------------------------------------------------

    def relu(self) -> "Tensor":
        # subgradient 0 at exactly 0
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self, floor: float = 0.0) -> "Tensor":
        """Natural log of ``max(x, floor)``; zero gradient where floored."""
        x = self.data
        clipped = np.maximum(x, floor) if floor > 0 else x
        active = x >= floor if floor > 0 else np.ones_like(x, dtype=bool)

        def back(g):
            return (np.where(active, g / clipped, 0.0),)

        return Tensor._make(np.log(clipped), (self,), back)

    def clamp(self, lo: float, hi: float) -> "Tensor":
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor._make(np.clip(x, lo, hi), (self,), lambda g: (g * inside,))

    def softmax(self) -> "Tensor":
        """Row softmax over the last axis."""
        s = softmax_rows(self.data)

        def back(g):
            return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

        return Tensor._make(s, (self,), back)

    def log_sigmoid(self) -> "Tensor":
        """Stable ``log(1 / (1 + exp(-x)))``."""
        x = self.data
        out = -np.logaddexp(0.0, -x)
        sig = np.exp(out)

        def back(g):
            return (g * (1.0 - sig),)

        return Tensor._make(out, (self,), back)

    def take(self, rows: np.ndarray, cols: np.ndarray) -> "Tensor":
        """Gather ``x[rows[i], cols[i]]`` into a vector."""
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, (rows, cols), g)
            return (full,)

        return Tensor._make(self.data[rows, cols], (self,), back)

    # -- reverse pass ---------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilised softmax along the last axis."""
    z = np.asarray(logits)
    if z.dtype != np.longdouble:
        z = z.astype(np.float64, copy=False)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def grad(
    loss_fn: Callable[..., Tensor], params: Sequence[np.ndarray]
) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``loss_fn(*leaves)`` and return ``(value, d value / d params)``.

    Each array in ``params`` is wrapped in a fresh leaf tensor; arrays the
    loss never touches get an all-zero gradient.
    """
    leaves = [Tensor(p, requires_grad=True) for p in params]
    out = loss_fn(*leaves)
    if out.requires_grad:
        out.backward()
    grads = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]
    return float(out.data), grads


def finite_diff_check(
    loss_fn: Callable[..., Tensor],
    params: Sequence[np.ndarray],
    step: float = 1e-5,
    extended: bool = True,
) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    Relative error per entry is ``|a - c| / (|a| + |c| + 1e-12)``. The
    analytic side runs in float64. With ``extended`` the central differences
    are evaluated in ``np.longdouble`` so that rounding in the loss does not
    swamp tiny gradient entries.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = grad(loss_fn, [np.array(p, dtype=np.float64) for p in params])
    params = [np.array(p, dtype=np.longdouble if extended else np.float64) for p in params]

    def value(ps: Iterable[np.ndarray]) -> float:
        return loss_fn(*[Tensor(p) for p in ps]).data[()]

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for e in range(flat.size):
            orig = flat[e]
            flat[e] = orig + step
            up = value(params)
            flat[e] = orig - step
            down = value(params)
            flat[e] = orig
            central = float((np.longdouble(up) - np.longdouble(down)) / (2 * np.longdouble(step)))
            a = analytic[pi].reshape(-1)[e]
            err = abs(a - central) / (abs(a) + abs(central) + 1e-12)
            worst = max(worst, err)
    return worst
