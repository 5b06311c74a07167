"""Dense float64 tensors with tape-based reverse-mode differentiation.

A deliberately small kernel: ~15 primitives, explicit shape checks, no
implicit broadcasting. Tensors are immutable values; every primitive
applied while a GradTape is active is recorded on it, and the backward
pass replays the records in exact reverse order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "GradTape",
    "ShapeError",
    "tensor",
    "zeros",
    "matmul",
    "concat",
    "narrow",
    "add_bias",
    "softplus",
    "backward",
    "gradcheck",
    "GradCheckReport",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's contract."""


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(op: str, arr: np.ndarray) -> None:
    # Cheap single-pass screen: any NaN/inf entry makes the sum non-finite.
    if arr.size and not np.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"{op} produced non-finite values")


class Tensor:
    """Immutable dense float64 array, row-major.

    ``needs_grad`` marks tensors whose adjoints the backward pass must
    propagate; it is set for parameters and inherited through ops.
    """

    __slots__ = ("data", "needs_grad", "tape")

    def __init__(self, data, needs_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.needs_grad = bool(needs_grad)
        self.tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, needs_grad={self.needs_grad})"

    # -- arithmetic operators -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return _elementwise("add", self, other, lambda a, b: a + b,
                                lambda g, a, b: g, lambda g, a, b: g)
        return _scalar_op("add_scalar", self, float(other), lambda a, c: a + c,
                          lambda g, c: g)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return _elementwise("sub", self, other, lambda a, b: a - b,
                                lambda g, a, b: g, lambda g, a, b: -g)
        return _scalar_op("sub_scalar", self, float(other), lambda a, c: a - c,
                          lambda g, c: g)

    def __rsub__(self, other):
        return _scalar_op("rsub_scalar", self, float(other), lambda a, c: c - a,
                          lambda g, c: -g)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return _elementwise("mul", self, other, lambda a, b: a * b,
                                lambda g, a, b: g * b, lambda g, a, b: g * a)
        return _scalar_op("mul_scalar", self, float(other), lambda a, c: a * c,
                          lambda g, c: g * c)

    __rmul__ = __mul__

    def __neg__(self):
        return _scalar_op("neg", self, -1.0, lambda a, c: -a, lambda g, c: -g)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != self.size:
            raise ShapeError(f"reshape: cannot view {self.shape} as {shape}")
        old = self.shape
        return _record("reshape", self.data.reshape(shape), (self,),
                       lambda g: (g.reshape(old),))

    def transpose(self, axes) -> "Tensor":
        axes = tuple(int(a) for a in axes)
        if sorted(axes) != list(range(self.ndim)):
            raise ShapeError(f"transpose: axes {axes} invalid for rank {self.ndim}")
        inv = tuple(int(a) for a in np.argsort(axes))
        return _record("transpose", self.data.transpose(axes), (self,),
                       lambda g: (g.transpose(inv),))

    # -- pointwise nonlinearities ----------------------------------------------

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)
        return _record("sigmoid", out, (self,), lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return _record("tanh", out, (self,), lambda g: (g * (1.0 - out * out),))

    def abs(self) -> "Tensor":
        x = self.data
        return _record("abs", np.abs(x), (self,), lambda g: (g * np.sign(x),))

    # -- reductions -------------------------------------------------------------

    def sum(self, axis: int | None = None) -> "Tensor":
        return _reduce("sum", self, axis, scale=False)

    def mean(self, axis: int | None = None) -> "Tensor":
        return _reduce("mean", self, axis, scale=True)


def tensor(data, needs_grad: bool = False) -> Tensor:
    """Wrap an array-like as a (copied) constant tensor."""
    return Tensor(data, needs_grad=needs_grad)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


def _record(op: str, out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    out_data = np.asarray(out_data, dtype=np.float64)
    if not out_data.flags.c_contiguous:
        out_data = out_data.copy(order="C")
    _check_finite(op, out_data)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.needs_grad = any(t.needs_grad for t in inputs)
    out.tape = None
    tape = _active_tape()
    if tape is not None:
        out.tape = tape
        tape._records.append((out, inputs, backward_fn))
    return out


def _elementwise(op, a: Tensor, b: Tensor, fwd, bwd_a, bwd_b) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = bwd_a(g, ad, bd) if a.needs_grad else None
        gb = bwd_b(g, ad, bd) if b.needs_grad else None
        return ga, gb

    return _record(op, fwd(ad, bd), (a, b), backward_fn)


def _scalar_op(op, a: Tensor, c: float, fwd, bwd) -> Tensor:
    if not np.isfinite(c):
        raise ValueError(f"{op}: scalar operand {c} is not finite")
    return _record(op, fwd(a.data, c), (a,), lambda g: (bwd(g, c),))


def _reduce(op, a: Tensor, axis: int | None, scale: bool) -> Tensor:
    if axis is None:
        n = max(a.size, 1)
        out = a.data.mean() if scale else a.data.sum()
        shape = a.shape

        def backward_fn(g):
            val = g / n if scale else g
            return (np.full(shape, val),)

        return _record(op, np.asarray(out), (a,), backward_fn)

    axis = int(axis)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.shape}")
    n = a.shape[axis]
    out = a.data.mean(axis=axis) if scale else a.data.sum(axis=axis)

    def backward_fn(g):
        expanded = np.repeat(np.expand_dims(g, axis), n, axis=axis)
        return (expanded / n if scale else expanded,)

    return _record(op, out, (a,), backward_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; inner dimensions must agree."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = g @ bd.T if a.needs_grad else None
        gb = ad.T @ g if b.needs_grad else None
        return ga, gb

    return _record("matmul", ad @ bd, (a, b), backward_fn)


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along an existing axis; all other extents must match."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    axis = int(axis)
    ref = tensors[0]
    if not 0 <= axis < ref.ndim:
        raise ShapeError(f"concat: axis {axis} out of range for shape {ref.shape}")
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != axis and t.shape[i] != ref.shape[i] for i in range(ref.ndim)
        ):
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        pieces = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.needs_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                pieces.append(np.ascontiguousarray(g[tuple(idx)]))
            else:
                pieces.append(None)
        return tuple(pieces)

    return _record("concat", np.concatenate([t.data for t in tensors], axis=axis),
                   tuple(tensors), backward_fn)


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of length ``size`` along ``axis``."""
    axis, start, size = int(axis), int(start), int(size)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"narrow: axis {axis} out of range for shape {a.shape}")
    if start < 0 or size < 0 or start + size > a.shape[axis]:
        raise ShapeError(f"narrow: range [{start}, {start + size}) invalid for shape {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)
    in_shape = a.shape

    def backward_fn(g):
        full = np.zeros(in_shape)
        full[idx] = g
        return (full,)

    return _record("narrow", a.data[idx], (a,), backward_fn)


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a 1-D bias along the last axis (the one explicit broadcast)."""
    if bias.ndim != 1 or a.ndim < 1 or bias.shape[0] != a.shape[-1]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit last axis of {a.shape}")
    lead = tuple(range(a.ndim - 1))

    def backward_fn(g):
        ga = g if a.needs_grad else None
        gb = g.sum(axis=lead) if bias.needs_grad else None
        return ga, gb

    return _record("add_bias", a.data + bias.data, (a, bias), backward_fn)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated stably; derivative is sigmoid(x)."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _record("softplus", out, (a,), lambda g: (g * _sigmoid(x),))


class ParamStore:
    """Named parameter tensors with deterministic lexicographic iteration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = Tensor(value, needs_grad=True)
        self._params[name] = t
        return t

    def assign(self, name: str, value) -> Tensor:
        old = self._params[name]
        t = Tensor(value, needs_grad=True)
        if t.shape != old.shape:
            raise ShapeError(f"assign: {name!r} has shape {old.shape}, got {t.shape}")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.items()}

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, t in self.items():
            dup.add(name, t.data.copy())
        return dup


class GradTape:
    """Ordered record of primitive ops; adjoints replay in exact reverse."""

    def __init__(self):
        self._records = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("GradTape contexts exited out of order")
        return False

    def __len__(self) -> int:
        return len(self._records)

    def gradients(self, loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
        """Adjoint of ``loss`` w.r.t. every parameter (zeros when unreachable)."""
        if loss.shape != ():
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        adjoints: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
        for out, inputs, backward_fn in reversed(self._records):
            g = adjoints.pop(id(out), None)
            if g is None or not any(t.needs_grad for t in inputs):
                continue
            for t, gi in zip(inputs, backward_fn(g)):
                if gi is None or not t.needs_grad:
                    continue
                acc = adjoints.get(id(t))
                adjoints[id(t)] = gi if acc is None else acc + gi
        return {
            name: adjoints.get(id(t), np.zeros(t.shape)).reshape(t.shape)
            for name, t in params.items()
        }


def backward(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every named parameter."""
    if loss.tape is None:
        raise RuntimeError("loss was not recorded on a GradTape")
    return loss.tape.gradients(loss, params)


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between analytic and numeric gradients."""

    step: float
    tol: float
    per_param: dict[str, float]

    @property
    def worst(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def gradcheck(f, params: ParamStore, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of ``f(params)`` against central finite differences.

    Relative error uses a 1e-6 denominator floor, so gradients below that
    magnitude are compared absolutely.
    """
    with GradTape() as tape:
        loss = f(params)
    analytic = tape.gradients(loss, params)

    per_param: dict[str, float] = {}
    for name, p in params.items():
        base = p.data.copy()
        numeric = np.empty_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            params.assign(name, base)
            f_plus = f(params).item()
            flat[i] = orig - step
            params.assign(name, base)
            f_minus = f(params).item()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * step)
        params.assign(name, base)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
        err = np.abs(a - numeric) / denom
        per_param[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(step=step, tol=tol, per_param=per_param)
