"""Reverse-mode automatic differentiation on numpy arrays.

Graphs are define-by-run: every op executed while a Tape is active appends
one backward closure to the tape, and ``Tape.gradients`` replays the closures
in reverse creation order (which is a valid reverse topological order).
Outside a tape the same ops run value-only with no bookkeeping, so inference
code and training code share one implementation.

Values are plain ndarrays.  Callers decide dtype; float64 is the default for
training and gradient checking, float32 works for storage-bound inference.
"""

from __future__ import annotations

import numpy as np

_ACTIVE = None  # the recording Tape, or None


class Var:
    """A node in the computation graph: a value plus backward bookkeeping.

    ``ng`` (needs grad) marks nodes that can reach a parameter; backward
    closures only accumulate into such nodes.  Constants have ng=False and
    terminate gradient flow.
    """

    __slots__ = ("v", "grad", "ng", "_back")

    def __init__(self, values: np.ndarray, ng: bool = False, _back=None):
        self.v = values
        self.grad = None
        self.ng = ng
        self._back = _back

    @property
    def shape(self):
        return self.v.shape

    def __repr__(self):
        return f"Var(shape={self.v.shape}, ng={self.ng})"

    # operator sugar; everything routes through the module-level ops
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return neg(self)


class Tape:
    """Recording context.  Nested tapes are not supported; the engine is
    single-threaded per recording."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def gradients(self, loss: Var, params: dict) -> dict:
        """Backpropagate from a scalar loss and return {name: gradient}.

        Parameters that do not participate in the loss get exact zeros.
        Grad buffers on parameters are cleared before returning so repeated
        calls never leak accumulation across tapes.
        """
        if loss.v.ndim != 0:
            raise ValueError("loss must be a scalar")
        loss.grad = np.ones((), dtype=loss.v.dtype)
        for node in reversed(self.nodes):
            if node.grad is not None and node._back is not None:
                node._back(node.grad)
        out = {}
        for name, p in params.items():
            out[name] = p.grad if p.grad is not None else np.zeros_like(p.v)
            p.grad = None
        return out


def const(values) -> Var:
    return Var(np.asarray(values, dtype=np.float64))


def param(values) -> Var:
    """A leaf tensor that receives gradients."""
    return Var(np.asarray(values, dtype=np.float64), ng=True)


def _lift(x):
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64))


def _record(values, back, *parents) -> Var:
    tape = _ACTIVE
    if tape is None:
        return Var(values)
    ng = False
    for p in parents:
        if p.ng:
            ng = True
            break
    out = Var(values, ng=ng, _back=back if ng else None)
    if ng:
        tape.nodes.append(out)
    return out


def _acc(p: Var, g: np.ndarray):
    if p.ng:
        p.grad = g if p.grad is None else p.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape the operand actually had."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Var, b: Var) -> Var:
    out = a.v + b.v

    def back(g):
        _acc(a, _unbroadcast(g, a.v.shape))
        _acc(b, _unbroadcast(g, b.v.shape))

    return _record(out, back, a, b)


def sub(a: Var, b: Var) -> Var:
    out = a.v - b.v

    def back(g):
        _acc(a, _unbroadcast(g, a.v.shape))
        _acc(b, _unbroadcast(-g, b.v.shape))

    return _record(out, back, a, b)


def mul(a: Var, b: Var) -> Var:
    out = a.v * b.v

    def back(g):
        _acc(a, _unbroadcast(g * b.v, a.v.shape))
        _acc(b, _unbroadcast(g * a.v, b.v.shape))

    return _record(out, back, a, b)


def div(a: Var, b: Var) -> Var:
    out = a.v / b.v

    def back(g):
        _acc(a, _unbroadcast(g / b.v, a.v.shape))
        _acc(b, _unbroadcast(-g * out / b.v, b.v.shape))

    return _record(out, back, a, b)


def neg(a: Var) -> Var:
    def back(g):
        _acc(a, -g)

    return _record(-a.v, back, a)


def matmul(a: Var, b: Var) -> Var:
    out = a.v @ b.v

    def back(g):
        _acc(a, g @ b.v.T)
        _acc(b, a.v.T @ g)

    return _record(out, back, a, b)


def affine(x: Var, w: Var, b: Var) -> Var:
    """x @ w + b in a single node; b broadcasts over rows."""
    out = x.v @ w.v + b.v

    def back(g):
        _acc(x, g @ w.v.T)
        _acc(w, x.v.T @ g)
        _acc(b, _unbroadcast(g, b.v.shape))

    return _record(out, back, x, w, b)


def bmm(a: Var, b: Var) -> Var:
    """Batched matmul on 3-d stacks: (B,m,k) @ (B,k,n)."""
    out = a.v @ b.v

    def back(g):
        _acc(a, g @ b.v.swapaxes(1, 2))
        _acc(b, a.v.swapaxes(1, 2) @ g)

    return _record(out, back, a, b)


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def exp(a: Var) -> Var:
    out = np.exp(a.v)

    def back(g):
        _acc(a, g * out)

    return _record(out, back, a)


def log(a: Var) -> Var:
    def back(g):
        _acc(a, g / a.v)

    return _record(np.log(a.v), back, a)


def tanh(a: Var) -> Var:
    out = np.tanh(a.v)

    def back(g):
        _acc(a, g * (1.0 - out * out))

    return _record(out, back, a)


def sigmoid(a: Var) -> Var:
    # exp(-logaddexp(0,-x)) is exact and overflow-safe on both tails
    out = np.exp(-np.logaddexp(0.0, -a.v))

    def back(g):
        _acc(a, g * out * (1.0 - out))

    return _record(out, back, a)


def relu(a: Var) -> Var:
    out = np.maximum(a.v, 0.0)

    def back(g):
        _acc(a, g * (a.v > 0.0))

    return _record(out, back, a)


def clip(a: Var, lo: float, hi: float) -> Var:
    out = np.clip(a.v, lo, hi)

    def back(g):
        _acc(a, g * ((a.v > lo) & (a.v < hi)))

    return _record(out, back, a)


# ---------------------------------------------------------------------------
# reductions and shape ops

def vsum(a: Var, axis=None, keepdims: bool = False) -> Var:
    out = a.v.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.v.shape).copy())
        elif keepdims:
            _acc(a, np.broadcast_to(g, a.v.shape).copy())
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.v.shape).copy())

    return _record(out, back, a)


def concat(parts: list, axis: int = 1) -> Var:
    out = np.concatenate([p.v for p in parts], axis=axis)
    sizes = [p.v.shape[axis] for p in parts]

    def back(g):
        at = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(at, at + n)
            _acc(p, g[tuple(sl)])
            at += n

    return _record(out, back, *parts)


def cols(a: Var, j0: int, j1: int) -> Var:
    out = a.v[:, j0:j1]

    def back(g):
        buf = np.zeros_like(a.v)
        buf[:, j0:j1] = g
        _acc(a, buf)

    return _record(out, back, a)


def gather_rows(a: Var, idx: np.ndarray) -> Var:
    out = a.v[idx]

    def back(g):
        buf = np.zeros_like(a.v)
        np.add.at(buf, idx, g)
        _acc(a, buf)

    return _record(out, back, a)


def set_rows(base: np.ndarray, idx: np.ndarray, rows: Var) -> Var:
    """Copy of a constant base with rows[idx] overwritten by a Var.

    The base carries no gradient; only the written rows do.  idx must not
    contain duplicates (each row is written once).
    """
    out = base.copy()
    out[idx] = rows.v

    def back(g):
        _acc(rows, g[idx])

    return _record(out, back, rows)


def reshape(a: Var, shape) -> Var:
    orig = a.v.shape

    def back(g):
        _acc(a, g.reshape(orig))

    return _record(a.v.reshape(shape), back, a)


def swap_last2(a: Var) -> Var:
    def back(g):
        _acc(a, g.swapaxes(-1, -2))

    return _record(a.v.swapaxes(-1, -2), back, a)


# ---------------------------------------------------------------------------
# planar rotations (constant angles, differentiable points)

def rot_into(xy: Var, c: np.ndarray, s: np.ndarray) -> Var:
    """Rotate (...,2) points by -theta given constant cos/sin columns:
    world offsets into an ego frame."""
    x, y = xy.v[..., 0], xy.v[..., 1]
    out = np.stack([c * x + s * y, c * y - s * x], axis=-1)

    def back(g):
        g0, g1 = g[..., 0], g[..., 1]
        _acc(xy, np.stack([c * g0 - s * g1, s * g0 + c * g1], axis=-1))

    return _record(out, back, xy)


def rot_from(xy: Var, c: np.ndarray, s: np.ndarray) -> Var:
    """Rotate (...,2) points by +theta: ego-frame offsets back to world."""
    x, y = xy.v[..., 0], xy.v[..., 1]
    out = np.stack([c * x - s * y, s * x + c * y], axis=-1)

    def back(g):
        g0, g1 = g[..., 0], g[..., 1]
        _acc(xy, np.stack([c * g0 + s * g1, c * g1 - s * g0], axis=-1))

    return _record(out, back, xy)


# ---------------------------------------------------------------------------
# composed row-wise softmax helpers (exact gradients via the primitives)

def logsumexp_rows(a: Var) -> Var:
    """Row-wise logsumexp of a 2-d Var, keepdims.  The max shift is a
    constant, which leaves the gradient exact."""
    m = a.v.max(axis=1, keepdims=True)
    e = exp(sub(a, Var(m)))
    s = vsum(e, axis=1, keepdims=True)
    return add(log(s), Var(m))


def log_softmax_rows(a: Var) -> Var:
    return sub(a, logsumexp_rows(a))


def softmax_rows_values(x: np.ndarray) -> np.ndarray:
    """Value-level stable softmax over the last axis."""
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp_values(x: np.ndarray, axis=-1, keepdims=False) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    out = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)
