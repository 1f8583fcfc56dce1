"""Dense-tensor math with reverse-mode gradient accumulation.

Tensors wrap 64-bit float arrays in row-major order. Every operation
records a backward closure on the output node; ``backward`` walks the
graph in reverse topological order and accumulates gradients into the
parameter leaves. Repeated backward passes without a gradient reset add
up, which keeps per-sample accumulation deterministic.

Subgradient policy at non-differentiable points: ReLU and the hinge use
0 at the kink, and the gradient of the Euclidean norm at the zero
vector is 0. Reductions follow numpy's fixed row-major evaluation, so
forward values are bit-identical across runs on the same platform.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

# Scales matmul's left-operand gradient by (1 + x). Verification-harness
# sensitivity hook only; see verify.run_battery.
_GRAD_PERTURBATION = 0.0


def set_gradient_perturbation(x: float) -> None:
    global _GRAD_PERTURBATION
    _GRAD_PERTURBATION = float(x)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "_parents", "_backward_fn", "_persistent_grad")

    def __init__(self, data, _parents: tuple = (), _backward_fn: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # Keep 0-d scalars 0-d; ascontiguousarray would promote them to 1-d.
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._persistent_grad = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Param:
    """A trainable leaf: value plus a persistent, zero-initialized gradient."""

    __slots__ = ("id", "value")

    def __init__(self, data, pid: str):
        self.id = pid
        self.value = Tensor(data)
        self.value.grad = np.zeros_like(self.value.data)
        self.value._persistent_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param(id={self.id!r}, shape={self.value.shape})"


def zero_grads(params: Sequence[Param]) -> None:
    for p in params:
        p.zero_grad()


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every persistent-gradient leaf.

    Non-persistent (intermediate) gradients are reset at the start of
    each call, so calling backward twice on the same graph exactly
    doubles the parameter gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        if not node._persistent_grad:
            node.grad = np.zeros_like(node.data)
    if loss._persistent_grad:
        loss.grad += 1.0
    else:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# Operations. Each op registers itself so the verification battery can
# enumerate and gradient-check the full set.
# ---------------------------------------------------------------------------

OPS: dict[str, Callable] = {}


def _register(fn):
    OPS[fn.__name__] = fn
    return fn


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is not None:
        t.grad += g


@_register
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; backward dA = dC·Bᵀ, dB = Aᵀ·dC."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def bwd(g):
        _accum(a, (g @ b.data.T) * (1.0 + _GRAD_PERTURBATION))
        _accum(b, a.data.T @ g)

    out._backward_fn = bwd
    return out


@_register
def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    out = Tensor(a.data.T, (a,))
    out._backward_fn = lambda g: _accum(a, g.T)
    return out


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> bool:
    """True when b is a vector broadcast across the rows of matrix a."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


@_register
def add(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if broadcast else g)

    out._backward_fn = bwd
    return out


@_register
def sub(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data, (a, b))

    def bwd(g):
        _accum(a, g)
        _accum(b, -(g.sum(axis=0) if broadcast else g))

    out._backward_fn = bwd
    return out


@_register
def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; b may be a vector gating the columns of a."""
    broadcast = _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        _accum(a, g * b.data)
        gb = g * a.data
        _accum(b, gb.sum(axis=0) if broadcast else gb)

    out._backward_fn = bwd
    return out


@_register
def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c, (a,))
    out._backward_fn = lambda g: _accum(a, g * c)
    return out


@_register
def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + float(c), (a,))
    out._backward_fn = lambda g: _accum(a, g)
    return out


@_register
def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, a); gradient is zero at and below 0."""
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    out._backward_fn = lambda g: _accum(a, g * (a.data > 0.0))
    return out


@_register
def hinge(s: Tensor) -> Tensor:
    """max(0, s) on a scalar; subgradient 1 for s > 0, else 0."""
    if s.data.size != 1:
        raise ShapeError(f"hinge: expected a scalar, got shape {s.shape}")
    out = Tensor(np.maximum(s.data, 0.0), (s,))
    out._backward_fn = lambda g: _accum(s, g * (s.data > 0.0))
    return out


@_register
def euclidean_norm(a: Tensor) -> Tensor:
    """L2 norm of a vector; the gradient at the zero vector is zero."""
    if a.data.ndim != 1:
        raise ShapeError(f"euclidean_norm: expected a vector, got shape {a.shape}")
    value = float(np.sqrt(np.sum(a.data * a.data)))
    out = Tensor(value, (a,))

    def bwd(g):
        if value > 0.0:
            _accum(a, g * (a.data / value))

    out._backward_fn = bwd
    return out


@_register
def row_norms(a: Tensor) -> Tensor:
    """Per-row L2 norms of a matrix; zero rows get zero gradient."""
    if a.data.ndim != 2:
        raise ShapeError(f"row_norms: expected a matrix, got shape {a.shape}")
    norms = np.sqrt(np.sum(a.data * a.data, axis=1))
    out = Tensor(norms, (a,))

    def bwd(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        _accum(a, (g * (norms > 0.0) / safe)[:, None] * a.data)

    out._backward_fn = bwd
    return out


@_register
def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data), (a,))
    out._backward_fn = lambda g: _accum(a, np.full_like(a.data, float(g)))
    return out


@_register
def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(np.sum(a.data) / n, (a,))
    out._backward_fn = lambda g: _accum(a, np.full_like(a.data, float(g) / n))
    return out


@_register
def rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Gather rows of a matrix; backward scatter-adds into the source."""
    if a.data.ndim != 2:
        raise ShapeError(f"rows: expected a matrix, got shape {a.shape}")
    index = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.data[index], (a,))

    def bwd(g):
        if a.grad is not None:
            np.add.at(a.grad, index, g)

    out._backward_fn = bwd
    return out


@_register
def col(a: Tensor, j: int) -> Tensor:
    """Select column j of a matrix as a vector."""
    if a.data.ndim != 2:
        raise ShapeError(f"col: expected a matrix, got shape {a.shape}")
    if not 0 <= j < a.shape[1]:
        raise IndexError(f"col: index {j} out of range for shape {a.shape}")
    out = Tensor(a.data[:, j].copy(), (a,))

    def bwd(g):
        if a.grad is not None:
            a.grad[:, j] += g

    out._backward_fn = bwd
    return out


@_register
def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log(sum(exp)); numerically stabilized."""
    if a.data.ndim != 2:
        raise ShapeError(f"logsumexp_rows: expected a matrix, got shape {a.shape}")
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    z = e.sum(axis=1, keepdims=True)
    out = Tensor((m + np.log(z)).ravel(), (a,))
    out._backward_fn = lambda g: _accum(a, g[:, None] * (e / z))
    return out


@_register
def pick(a: Tensor, col_idx: Sequence[int]) -> Tensor:
    """Take a[i, col_idx[i]] for each row i."""
    if a.data.ndim != 2:
        raise ShapeError(f"pick: expected a matrix, got shape {a.shape}")
    cols = np.asarray(col_idx, dtype=np.intp)
    if cols.shape != (a.shape[0],):
        raise ShapeError(f"pick: need one column index per row, got {cols.shape} for {a.shape}")
    rows_idx = np.arange(a.shape[0])
    out = Tensor(a.data[rows_idx, cols], (a,))

    def bwd(g):
        if a.grad is not None:
            np.add.at(a.grad, (rows_idx, cols), g)

    out._backward_fn = bwd
    return out


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(scalar_fn: Callable[[], Tensor], params: Sequence[Param], eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients against central finite differences.

    Evaluates ``scalar_fn`` (which must read the current parameter
    values and return a scalar Tensor), backpropagates, then perturbs
    every parameter entry by ±eps and recomputes. Returns the maximum
    relative error with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    out = scalar_fn()
    if out.data.size != 1:
        raise ContractError(f"grad_check: scalar_fn returned shape {out.shape}")
    zero_grads(params)
    backward(out)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = scalar_fn().item()
            flat[k] = orig - eps
            f_minus = scalar_fn().item()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = ga.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
