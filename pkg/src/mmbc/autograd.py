"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy float64 array. While a :class:`Tape` is
active (used as a context manager), every operation that touches a tensor
with ``requires_grad`` records itself on the tape in execution order.
``Tape.gradients`` replays the record in reverse, accumulating
vector-Jacobian products. Reverse execution order is a valid topological
order of the dataflow graph, so each recorded op is visited exactly once.

Without an active tape every op is a plain numpy computation, which is
what evaluation rollouts use. Tapes are cheap single-use objects: build
one per forward pass. Tensors and tapes are single-threaded; independent
tapes may live on different threads (the active-tape stack is
thread-local).

All data is float64. Op outputs are not finiteness-checked by default
(tensor construction from external data is); enable per-op checks with
``set_debug_checks(True)`` when hunting a NaN.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeMismatchError

_state = threading.local()

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle finiteness assertions on every op output (slow, for debugging)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _active_tape():
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array plus the flag the tape needs.

    ``data`` is row-major float64; ``shape`` is derived from it. Tensors
    hash by identity, which is what keys the gradient map.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor initialised with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    """Tensor that never receives gradient."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """Learnable tensor: gradients flow into it."""
    return Tensor(data, requires_grad=True)


def _result(arr: np.ndarray, requires_grad: bool) -> Tensor:
    # Fast-path constructor for op outputs; skips the finiteness check
    # unless debug checks are on.
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise DomainError("op produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = requires_grad
    return t


class Tape:
    """Ordered record of executed ops for one forward pass."""

    __slots__ = ("_ops",)

    def __init__(self):
        # Each entry: (output tensor, input tensors, backward closure).
        # The closure maps the output gradient to per-input gradients
        # (None for inputs that need none).
        self._ops: list = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = []
            _state.tapes = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.pop()
        return False

    def __len__(self) -> int:
        return len(self._ops)

    def gradients(
        self,
        loss: Tensor,
        params: Sequence[Tensor] | None = None,
    ) -> dict:
        """Gradient of ``loss`` w.r.t. every requires_grad tensor on the tape.

        Returns a dict keyed by tensor identity. Tensors recorded on the
        tape but not on any path to the loss map to zeros, as does every
        entry of ``params`` the tape never saw. Replaying the same tape
        twice yields bitwise-identical results: the walk never mutates
        tape state and accumulation is out-of-place in a fixed order.
        """
        if loss.data.ndim != 0:
            raise ContractError(
                f"loss must be a scalar, got shape {loss.data.shape}"
            )
        grads: dict = {loss: np.ones((), dtype=np.float64)}
        for out, inputs, backward in reversed(self._ops):
            gout = grads.get(out)
            if gout is None:
                continue
            contribs = backward(gout)
            for tin, contrib in zip(inputs, contribs):
                if contrib is None or not tin.requires_grad:
                    continue
                acc = grads.get(tin)
                # Out-of-place accumulation: stored arrays may alias saved
                # forward values or views of other gradients, so they are
                # never mutated.
                grads[tin] = contrib if acc is None else acc + contrib
        # Tensors touched by the tape but unreached by the walk get zeros.
        for out, inputs, _ in self._ops:
            for tin in inputs:
                if tin.requires_grad and tin not in grads:
                    grads[tin] = np.zeros_like(tin.data)
            if out.requires_grad and out not in grads:
                grads[out] = np.zeros_like(out.data)
        if params is not None:
            for p in params:
                if p not in grads:
                    grads[p] = np.zeros_like(p.data)
        return grads


def backward(loss: Tensor, tape: Tape, params: Sequence[Tensor] | None = None) -> dict:
    """Module-level alias for :meth:`Tape.gradients`."""
    return tape.gradients(loss, params)


def record(out: Tensor, inputs: tuple, backward_fn: Callable) -> None:
    """Register a custom op on the active tape (no-op when none is active).

    ``backward_fn(grad_out)`` must return one gradient array (or None)
    per input, and must not retain references it later mutates.
    """
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._ops.append((out, inputs, backward_fn))


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2d/2d, 2d/1d, 1d/2d and 1d/1d operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1] != bd.shape[0]:
        raise ShapeMismatchError(
            f"matmul: incompatible shapes {ad.shape} and {bd.shape}"
        )
    out = _result(ad @ bd, a.requires_grad or b.requires_grad)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        def bwd(g, ad=ad, bd=bd, ra=a.requires_grad, rb=b.requires_grad):
            if ad.ndim == 2 and bd.ndim == 2:
                ga = g @ bd.T if ra else None
                gb = ad.T @ g if rb else None
            elif ad.ndim == 2 and bd.ndim == 1:
                ga = np.outer(g, bd) if ra else None
                gb = ad.T @ g if rb else None
            elif ad.ndim == 1 and bd.ndim == 2:
                ga = bd @ g if ra else None
                gb = np.outer(ad, g) if rb else None
            else:  # 1d @ 1d -> scalar
                ga = g * bd if ra else None
                gb = g * ad if rb else None
            return ga, gb
        tape._ops.append((out, (a, b), bwd))
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias``; ``x`` may be a vector or row batch."""
    xd, wd, bd = x.data, weight.data, bias.data
    if wd.ndim != 2 or bd.ndim != 1 or wd.shape[0] != bd.shape[0] \
            or xd.shape[-1] != wd.shape[1] or xd.ndim not in (1, 2):
        raise ShapeMismatchError(
            f"linear: x {xd.shape}, weight {wd.shape}, bias {bd.shape}"
        )
    if xd.ndim == 1:
        y = wd @ xd + bd
    else:
        y = xd @ wd.T + bd
    out = _result(y, x.requires_grad or weight.requires_grad or bias.requires_grad)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        def bwd(g, xd=xd, wd=wd, rx=x.requires_grad,
                rw=weight.requires_grad, rb=bias.requires_grad):
            if xd.ndim == 1:
                gx = wd.T @ g if rx else None
                gw = np.outer(g, xd) if rw else None
                gb = g if rb else None
            else:
                gx = g @ wd if rx else None
                gw = g.T @ xd if rw else None
                gb = g.sum(axis=0) if rb else None
            return gx, gw, gb
        tape._ops.append((out, (x, weight, bias), bwd))
    return out


def _binary(a: Tensor, b: Tensor, fwd, bwd_a, bwd_b, name: str) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"{name}: shapes {a.data.shape} and {b.data.shape} differ"
        )
    out = _result(fwd(a.data, b.data), a.requires_grad or b.requires_grad)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        def bwd(g, ad=a.data, bd=b.data, ra=a.requires_grad, rb=b.requires_grad):
            return (bwd_a(g, ad, bd) if ra else None,
                    bwd_b(g, ad, bd) if rb else None)
        tape._ops.append((out, (a, b), bwd))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = _result(a.data + c, a.requires_grad)
    record(out, (a,), lambda g: (g,))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _result(a.data * c, a.requires_grad)
    record(out, (a,), lambda g, c=c: (g * c,))
    return out


def _unary(a: Tensor, y: np.ndarray, grad_fn) -> Tensor:
    out = _result(y, a.requires_grad)
    record(out, (a,), grad_fn)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _unary(a, y, lambda g, y=y: ((1.0 - y * y) * g,))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _unary(a, y, lambda g, y=y: (y * (1.0 - y) * g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _unary(a, y, lambda g, y=y: (y * g,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    y = np.log(a.data)
    return _unary(a, y, lambda g, x=a.data: (g / x,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    # Gradient is zero on clamped coordinates (subgradient at the boundary).
    y = np.maximum(a.data, floor)
    mask = a.data > floor
    return _unary(a, y, lambda g, mask=mask: (g * mask,))


def softmax(a: Tensor) -> Tensor:
    """Stable softmax along the last axis (rows for matrices)."""
    if a.data.ndim == 0:
        raise ShapeMismatchError("softmax needs at least a 1d input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    def bwd(g, y=y):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)
    return _unary(a, y, bwd)


def sum_all(a: Tensor) -> Tensor:
    y = np.asarray(a.data.sum())
    return _unary(a, y, lambda g, shp=a.data.shape: (np.broadcast_to(g, shp),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [t.data for t in tensors]
    try:
        y = np.concatenate(parts, axis=axis)
    except ValueError as err:
        raise ShapeMismatchError(f"concat: {err}") from None
    out = _result(y, any(t.requires_grad for t in tensors))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum(sizes)[:-1]
        def bwd(g, offsets=offsets, axis=axis):
            return tuple(np.split(g, offsets, axis=axis))
        tape._ops.append((out, tuple(tensors), bwd))
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equal-shape tensors along a new axis (scalars become a vector)."""
    y = np.stack([t.data for t in tensors], axis=axis)
    out = _result(y, any(t.requires_grad for t in tensors))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        n = len(tensors)
        def bwd(g, n=n, axis=axis):
            return tuple(np.take(g, i, axis=axis) for i in range(n))
        tape._ops.append((out, tuple(tensors), bwd))
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise ShapeMismatchError(
            f"narrow: [{start}, {start + length}) out of range for axis "
            f"{axis} of shape {a.data.shape}"
        )
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    y = a.data[idx].copy()
    def bwd(g, shp=a.data.shape, idx=idx):
        full = np.zeros(shp, dtype=np.float64)
        full[idx] = g
        return (full,)
    return _unary(a, y, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    y = a.data.reshape(shape)
    return _unary(a, y, lambda g, shp=a.data.shape: (g.reshape(shp),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got {a.data.shape}")
    return _unary(a, a.data.T.copy(), lambda g: (g.T,))


def tile_rows(v: Tensor, reps: int) -> Tensor:
    """Repeat a vector as the rows of a ``reps x n`` matrix."""
    if v.data.ndim != 1:
        raise ShapeMismatchError(f"tile_rows expects a vector, got {v.data.shape}")
    y = np.tile(v.data, (reps, 1))
    return _unary(v, y, lambda g: (g.sum(axis=0),))


def repeat_rows(m: Tensor, reps: int) -> Tensor:
    """Repeat each row of a matrix ``reps`` times consecutively."""
    if m.data.ndim != 2:
        raise ShapeMismatchError(f"repeat_rows expects a matrix, got {m.data.shape}")
    y = np.repeat(m.data, reps, axis=0)
    rows, cols = m.data.shape
    def bwd(g, rows=rows, reps=reps, cols=cols):
        return (g.reshape(rows, reps, cols).sum(axis=1),)
    return _unary(m, y, bwd)


def attention_combine(h_steps: Tensor, weights: Tensor) -> Tensor:
    """Per-row convex combination of time-major stacked states.

    ``h_steps`` is ``[T*B, H]`` with row ``t*B + b`` holding step ``t`` of
    batch element ``b``; ``weights`` is ``[B, T]``. Returns ``[B, H]`` with
    ``out[b] = sum_t weights[b, t] * h_steps[t*B + b]``.
    """
    wd = weights.data
    if h_steps.data.ndim != 2 or wd.ndim != 2 \
            or h_steps.data.shape[0] != wd.shape[0] * wd.shape[1]:
        raise ShapeMismatchError(
            f"attention_combine: states {h_steps.data.shape} vs weights {wd.shape}"
        )
    batch, steps = wd.shape
    width = h_steps.data.shape[1]
    h3 = h_steps.data.reshape(steps, batch, width)
    y = np.einsum("tbh,bt->bh", h3, wd)
    out = _result(y, h_steps.requires_grad or weights.requires_grad)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        def bwd(g, h3=h3, wd=wd, rh=h_steps.requires_grad,
                rw=weights.requires_grad, width=width):
            gh = (np.einsum("bt,bh->tbh", wd, g).reshape(-1, width)
                  if rh else None)
            gw = np.einsum("tbh,bh->bt", h3, g) if rw else None
            return gh, gw
        tape._ops.append((out, (h_steps, weights), bwd))
    return out


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log}


def elementwise(op_kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by name over the componentwise op family."""
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ContractError(f"elementwise '{op_kind}' needs two operands")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ContractError(f"elementwise '{op_kind}' takes one operand")
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ContractError(f"unknown elementwise op '{op_kind}'")


# ---------------------------------------------------------------------------
# numerical gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               h: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values and
    must be deterministic (pass any noise in, do not sample inside). The
    error metric per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    with Tape() as tape:
        loss = f()
    analytic = tape.gradients(loss, params)
    worst = 0.0
    for p in params:
        grad_flat = np.ravel(analytic[p])
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(grad_flat[i] - numeric) / max(
                1.0, abs(grad_flat[i]), abs(numeric))
            worst = max(worst, err)
    return worst
