"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Values live in numpy; the computation graph is rebuilt on every forward pass
(define-by-run) and differentiated by a single reverse topological sweep.
There is no broadcasting beyond scalar-with-tensor: shape alignment is the
caller's job, and mismatches raise :class:`DimensionError` eagerly.

Subgradient convention at kinks: relu'(0) = 0 and leaky_relu'(0) = slope
(the left branch), so gradients are deterministic everywhere.

Thread model: a graph is confined to one thread. Parameter values may be read
concurrently; gradient accumulation into shared parameters must be serialized
by the caller.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

Array = np.ndarray


def _as_value(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class DiffTensor:
    """A node in the differentiation graph: a value plus its accumulated grad.

    ``grad`` is ``None`` until a backward pass reaches the node; afterwards it
    has exactly the shape of ``value``. Repeated backward calls accumulate;
    ``zero_grad`` resets.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.value = _as_value(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "DiffTensor":
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None) -> "DiffTensor":
        return reduce_mean(self, axis)

    def backward(self) -> None:
        """Backpropagate from this scalar root.

        Populates ``grad`` on every reachable tensor with ``requires_grad``.
        Each node is visited exactly once per call; per-call flows are kept
        separate from the persistent ``grad`` buffers so that repeated calls
        add exactly one more unit of gradient everywhere.
        """
        if self.value.size != 1:
            raise ContractError(
                f"backward root must be scalar, got shape {self.value.shape}"
            )
        topo = _toposort(self)
        flows: dict[int, Array] = {id(self): np.ones_like(self.value)}

        def acc(t: DiffTensor, contribution: Array) -> None:
            contribution = np.asarray(contribution, dtype=np.float64)
            if contribution.shape != t.value.shape:
                raise DimensionError(
                    f"gradient shape {contribution.shape} does not match "
                    f"value shape {t.value.shape}"
                )
            key = id(t)
            prev = flows.get(key)
            flows[key] = contribution if prev is None else prev + contribution

        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward_fn is not None:
                node._backward_fn(g, acc)


def _toposort(root: DiffTensor) -> list[DiffTensor]:
    """Iterative DFS postorder; recursion would overflow on long loss chains."""
    topo: list[DiffTensor] = []
    visited: set[int] = set()
    stack: list[tuple[DiffTensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        parents = node._parents
        if idx < len(parents):
            stack.append((node, idx + 1))
            child = parents[idx]
            if id(child) not in visited:
                stack.append((child, 0))
        else:
            topo.append(node)
    return topo


def _coerce(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _make(value: Array, parents: Sequence[DiffTensor], backward_fn) -> DiffTensor:
    out = DiffTensor(value)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward_fn = backward_fn
    return out


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    """Collapse a broadcast gradient back onto a size-1 operand."""
    if g.shape == shape:
        return g
    return np.asarray(np.sum(g)).reshape(shape)


def _binary_value(a: DiffTensor, b: DiffTensor, opname: str) -> None:
    if a.value.shape == b.value.shape:
        return
    if a.value.size == 1 or b.value.size == 1:
        return
    raise DimensionError(
        f"{opname}: shapes {a.value.shape} and {b.value.shape} are incompatible "
        "(only scalar-with-tensor broadcasting is supported)"
    )


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> DiffTensor:
    a, b = _coerce(a), _coerce(b)
    _binary_value(a, b, "add")

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _reduce_to(g, a.value.shape))
        if b.requires_grad:
            acc(b, _reduce_to(g, b.value.shape))

    return _make(a.value + b.value, (a, b), bw)


def sub(a, b) -> DiffTensor:
    a, b = _coerce(a), _coerce(b)
    _binary_value(a, b, "sub")

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _reduce_to(g, a.value.shape))
        if b.requires_grad:
            acc(b, _reduce_to(-g, b.value.shape))

    return _make(a.value - b.value, (a, b), bw)


def mul(a, b) -> DiffTensor:
    a, b = _coerce(a), _coerce(b)
    _binary_value(a, b, "mul")

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _reduce_to(g * b.value, a.value.shape))
        if b.requires_grad:
            acc(b, _reduce_to(g * a.value, b.value.shape))

    return _make(a.value * b.value, (a, b), bw)


def div(a, b) -> DiffTensor:
    a, b = _coerce(a), _coerce(b)
    _binary_value(a, b, "div")
    if np.any(b.value == 0.0):
        raise DomainError("div: zero denominator")

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _reduce_to(g / b.value, a.value.shape))
        if b.requires_grad:
            acc(b, _reduce_to(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(a.value / b.value, (a, b), bw)


def negate(a) -> DiffTensor:
    a = _coerce(a)

    def bw(g, acc):
        acc(a, -g)

    return _make(-a.value, (a,), bw)


def square(a) -> DiffTensor:
    a = _coerce(a)

    def bw(g, acc):
        acc(a, 2.0 * a.value * g)

    return _make(a.value * a.value, (a,), bw)


def exp(a) -> DiffTensor:
    a = _coerce(a)
    out_value = np.exp(a.value)

    def bw(g, acc):
        acc(a, out_value * g)

    return _make(out_value, (a,), bw)


def log(a) -> DiffTensor:
    a = _coerce(a)
    if np.any(a.value <= 0.0):
        raise DomainError(f"log: non-positive input (min={a.value.min()})")

    def bw(g, acc):
        acc(a, g / a.value)

    return _make(np.log(a.value), (a,), bw)


def pointwise(a, fn, dfn) -> DiffTensor:
    """Custom differentiable pointwise function: value fn(x), derivative dfn(x)."""
    a = _coerce(a)

    def bw(g, acc):
        acc(a, dfn(a.value) * g)

    return _make(fn(a.value), (a,), bw)


# ---------------------------------------------------------------------------
# activations


def relu(a) -> DiffTensor:
    a = _coerce(a)

    def bw(g, acc):
        acc(a, np.where(a.value > 0.0, g, 0.0))

    return _make(np.maximum(a.value, 0.0), (a,), bw)


def leaky_relu(a, slope: float = 0.01) -> DiffTensor:
    a = _coerce(a)

    def bw(g, acc):
        acc(a, np.where(a.value > 0.0, g, slope * g))

    return _make(np.where(a.value > 0.0, a.value, slope * a.value), (a,), bw)


def _sigmoid_value(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> DiffTensor:
    a = _coerce(a)
    out_value = _sigmoid_value(a.value)

    def bw(g, acc):
        acc(a, out_value * (1.0 - out_value) * g)

    return _make(out_value, (a,), bw)


def softplus(a) -> DiffTensor:
    a = _coerce(a)

    def bw(g, acc):
        acc(a, _sigmoid_value(a.value) * g)

    return _make(np.logaddexp(0.0, a.value), (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> DiffTensor:
    a, b = _coerce(a), _coerce(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(
            f"matmul: expects 2-d operands, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.value.shape} x {b.value.shape}"
        )

    def bw(g, acc):
        if a.requires_grad:
            acc(a, g @ b.value.T)
        if b.requires_grad:
            acc(b, a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bw)


def reduce_sum(a, axis: int | None = None) -> DiffTensor:
    a = _coerce(a)
    _check_axis(a, axis)

    def bw(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, a.value.shape).copy())
        else:
            acc(a, np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy())

    return _make(np.sum(a.value, axis=axis), (a,), bw)


def reduce_mean(a, axis: int | None = None) -> DiffTensor:
    a = _coerce(a)
    _check_axis(a, axis)
    n = a.value.size if axis is None else a.value.shape[axis]

    def bw(g, acc):
        scaled = g / n
        if axis is None:
            acc(a, np.broadcast_to(scaled, a.value.shape).copy())
        else:
            acc(a, np.broadcast_to(np.expand_dims(scaled, axis), a.value.shape).copy())

    return _make(np.mean(a.value, axis=axis), (a,), bw)


def _check_axis(a: DiffTensor, axis: int | None) -> None:
    if axis is not None and not -a.value.ndim <= axis < a.value.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.value.shape}")


def concat(*tensors, axis: int = 0) -> DiffTensor:
    """Concatenate along ``axis``; all other dimensions must match exactly."""
    parts = [_coerce(t) for t in tensors]
    if len(parts) < 2:
        raise ContractError("concat needs at least two tensors")
    ndim = parts[0].value.ndim
    for p in parts[1:]:
        if p.value.ndim != ndim:
            raise DimensionError("concat: rank mismatch")
        for d in range(ndim):
            if d != axis % ndim and p.value.shape[d] != parts[0].value.shape[d]:
                raise DimensionError(
                    f"concat: shapes {parts[0].value.shape} and {p.value.shape} "
                    f"differ outside axis {axis}"
                )
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, acc):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                acc(p, g[tuple(idx)])

    return _make(np.concatenate([p.value for p in parts], axis=axis), parts, bw)


def slice_axis(a, axis: int, start: int, stop: int) -> DiffTensor:
    """Contiguous slice along one axis; backward zero-pads into the parent."""
    a = _coerce(a)
    _check_axis(a, axis)
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g, acc):
        full = np.zeros_like(a.value)
        full[idx] = g
        acc(a, full)

    return _make(a.value[idx].copy(), (a,), bw)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn: Callable[[], DiffTensor],
               params: Sequence[DiffTensor],
               step: float = 1e-5) -> float:
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` must be deterministic (frozen sampling) and close over
    ``params``, whose values are perturbed in place. Returns the maximum over
    all parameter entries of ``|analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8)``.
    """
    loss = loss_fn()
    if not np.isfinite(loss.value).all():
        raise NumericError("grad_check: loss is not finite")
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, a_grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("grad_check: perturbed loss is not finite")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = a_grad.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
