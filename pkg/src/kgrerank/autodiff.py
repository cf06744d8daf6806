"""Minimal dense linear algebra with reverse-mode gradients.

Everything is a 2-D float64 matrix wrapped in a Tensor that remembers
its parents and a backward closure; ``backward()`` on a 1x1 scalar
accumulates gradients into every reachable tensor. Each operation
supplies its own backward, which is what the finite-difference checker
verifies. All public operations assert finite values, and reductions
run in a fixed order so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import DeterminismError, InvariantViolation, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

LAYER_NORM_EPS = 1e-5


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D matrices, got shape {arr.shape}")
    return arr


class Tensor:
    """2-D float64 matrix node in the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, values, parents=(), backward=None):
        self.data = _as_matrix(values)
        if not np.isfinite(self.data).all():
            raise InvariantViolation("non-finite values in tensor")
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar shape {self.shape}")
        return float(self.data[0, 0])

    def backward(self) -> None:
        """Reverse-mode accumulation from this 1x1 scalar."""
        if self.data.shape != (1, 1):
            raise ShapeError(f"backward() starts from a 1x1 scalar, got {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def constant(values) -> Tensor:
    return Tensor(values)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"add shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"sub shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(a.data - b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, -_reduce_to(g, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"mul shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, parents=(a,))

    def backward(g):
        _accumulate(a, g * c)

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy(), parents=(a,))

    def backward(g):
        _accumulate(a, g.T)

    out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias row broadcast over rows of x."""
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear input {x.shape} does not match weight {w.shape}")
    if b.shape != (1, w.shape[1]):
        raise ShapeError(f"linear bias {b.shape} does not match weight {w.shape}")
    return add(matmul(x, w), b)


def hstack(parts: list[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"hstack row counts differ: {[p.shape for p in parts]}")
    out = Tensor(np.hstack([p.data for p in parts]), parents=tuple(parts))
    widths = [p.shape[1] for p in parts]

    def backward(g):
        at = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[:, at : at + w])
            at += w

    out._backward = backward
    return out


def vstack(parts: list[Tensor]) -> Tensor:
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"vstack col counts differ: {[p.shape for p in parts]}")
    out = Tensor(np.vstack([p.data for p in parts]), parents=tuple(parts))
    heights = [p.shape[0] for p in parts]

    def backward(g):
        at = 0
        for p, h in zip(parts, heights):
            _accumulate(p, g[at : at + h, :])
            at += h

    out._backward = backward
    return out


def take_rows(a: Tensor, indices: list[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"row indices out of range for shape {a.shape}")
    out = Tensor(a.data[idx], parents=(a,))

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        _accumulate(a, acc)

    out._backward = backward
    return out


def scatter_rows(src: Tensor, indices: list[int], n_rows: int) -> Tensor:
    """Place each row of src at its index in an otherwise-zero matrix.

    Indices must be unique; used to map per-entity rows onto aligned
    token positions.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if len(set(indices)) != len(indices):
        raise InvariantViolation("scatter_rows indices must be unique")
    if idx.size != src.shape[0]:
        raise ShapeError(f"{idx.size} indices for {src.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(f"scatter indices out of range for {n_rows} rows")
    data = np.zeros((n_rows, src.shape[1]))
    data[idx] = src.data
    out = Tensor(data, parents=(src,))

    def backward(g):
        _accumulate(src, g[idx])

    out._backward = backward
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[0]:
        raise ShapeError(f"row slice [{start}:{stop}] out of range for {a.shape}")
    out = Tensor(a.data[start:stop].copy(), parents=(a,))

    def backward(g):
        acc = np.zeros_like(a.data)
        acc[start:stop] = g
        _accumulate(a, acc)

    out._backward = backward
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError(f"col slice [{start}:{stop}] out of range for {a.shape}")
    out = Tensor(a.data[:, start:stop].copy(), parents=(a,))

    def backward(g):
        acc = np.zeros_like(a.data)
        acc[:, start:stop] = g
        _accumulate(a, acc)

    out._backward = backward
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by max subtraction."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, parents=(x,))

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, y * (g - dot))

    out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row normalization with learned gain and bias rows."""
    if gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise ShapeError(
            f"layer_norm gain {gain.shape} / bias {bias.shape} do not match {x.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(xhat * gain.data + bias.data, parents=(x, gain, bias))

    def backward(g):
        _accumulate(gain, (g * xhat).sum(axis=0, keepdims=True))
        _accumulate(bias, g.sum(axis=0, keepdims=True))
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(
            axis=1, keepdims=True
        )
        _accumulate(x, term * inv_std)

    out._backward = backward
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian error linear unit (erf form, not the tanh fit)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf, parents=(x,))
    pdf = np.exp(-0.5 * x.data**2) * _INV_SQRT2PI

    def backward(g):
        _accumulate(x, g * (cdf + x.data * pdf))

    out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = Tensor(s, parents=(x,))

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, parents=(x,))

    def backward(g):
        _accumulate(x, g * (1.0 - t**2))

    out._backward = backward
    return out


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise InvariantViolation("log of non-positive value")
    out = Tensor(np.log(x.data), parents=(x,))

    def backward(g):
        _accumulate(x, g / x.data)

    out._backward = backward
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor([[x.data.sum()]], parents=(x,))

    def backward(g):
        _accumulate(x, np.full_like(x.data, g[0, 0]))

    out._backward = backward
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a single row: (n x d) -> (1 x d)."""
    n = x.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True), parents=(x,))

    def backward(g):
        _accumulate(x, np.repeat(g, n, axis=0) / n)

    out._backward = backward
    return out


def logsumexp_column(x: Tensor) -> Tensor:
    """log(sum(exp(x))) over an (n x 1) column, stabilized; returns 1x1."""
    if x.shape[1] != 1:
        raise ShapeError(f"logsumexp_column expects a column, got {x.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    z = e.sum()
    out = Tensor([[m + np.log(z)]], parents=(x,))
    soft = e / z

    def backward(g):
        _accumulate(x, g[0, 0] * soft)

    out._backward = backward
    return out


ACTIVATIONS = {"gelu": gelu, "sigmoid": sigmoid, "tanh": tanh}


class ParamStore:
    """Named trainable matrices with per-name gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise InvariantViolation(f"duplicate parameter name {name!r}")
        t = Tensor(values)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self._params.items():
            other.add(name, t.data.copy())
        return other

    def save(self, path) -> None:
        arrays = {f"param:{name}": t.data for name, t in self._params.items()}
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with np.load(path) as data:
            for key in data.files:
                if key.startswith("param:"):
                    store.add(key[len("param:"):], data[key].astype(np.float64))
        return store


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_elements: int
    worst_param: str
    worst_index: tuple[int, int]
    worst_analytic: float
    worst_numeric: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(f, params: ParamStore, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of f() against central differences.

    ``f`` takes no arguments, closes over ``params``, and returns a 1x1
    Tensor. It is evaluated twice up front; any bitwise difference
    means it is not deterministic and the check refuses to run.
    Relative error uses |a - n| / max(1, |a|, |n|) so that zero
    gradients compare absolutely.
    """
    if eps <= 0:
        raise ShapeError(f"eps must be positive, got {eps}")
    base1 = f().item()
    base2 = f().item()
    if base1 != base2:
        raise DeterminismError(
            f"f() returned {base1!r} then {base2!r}; gradients are meaningless"
        )
    params.zero_grads()
    out = f()
    out.backward()
    analytic = {name: t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for name, t in params.items()}

    worst = (-1.0, "", (0, 0), 0.0, 0.0)
    n_elements = 0
    for name, t in params.items():
        grad = analytic[name]
        for i in range(t.data.shape[0]):
            for j in range(t.data.shape[1]):
                n_elements += 1
                orig = t.data[i, j]
                t.data[i, j] = orig + eps
                fp = f().item()
                t.data[i, j] = orig - eps
                fm = f().item()
                t.data[i, j] = orig
                numeric = (fp - fm) / (2.0 * eps)
                a = grad[i, j]
                rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                if rel > worst[0]:
                    worst = (rel, name, (i, j), a, numeric)
    return GradCheckReport(
        max_rel_error=worst[0],
        tol=tol,
        n_elements=n_elements,
        worst_param=worst[1],
        worst_index=worst[2],
        worst_analytic=worst[3],
        worst_numeric=worst[4],
    )
