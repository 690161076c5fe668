"""Minimal dense tensors with a recording tape and reverse-mode gradients.

Only the handful of ops the encoder needs are supported.  Shapes must match
exactly; the one exception is a Python scalar (or a 0-d tensor) combined with
a tensor in ``add``/``sub``/``mul``.  Ops whose definition involves a row
vector (``bias_add``, ``layernorm``) say so in their names/signatures.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "tensor", "backward", "forward_op", "finite_diff_check",
    "ShapeError", "NonFiniteError", "DetachedError",
    "add", "sub", "mul", "matmul", "bias_add", "rotate_pairs", "layernorm",
    "softmax", "gelu", "mse", "sum_all", "reshape", "transpose", "repeat",
    "take_rows",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class DetachedError(LookupError):
    pass


_FLOATS = (np.float32, np.float64)


class Tensor:
    """An immutable array value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        data = np.asarray(data)
        if data.dtype.type not in _FLOATS:
            raise TypeError(f"unsupported dtype {data.dtype}")
        if not np.isfinite(data).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        data.flags.writeable = False
        self.data = data
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Copy ``data`` into a new Tensor (float64 unless float32 is given/asked)."""
    arr = np.asarray(data)
    if dtype is None:
        dtype = np.float32 if arr.dtype == np.float32 else np.float64
    return Tensor(np.array(arr, dtype=dtype, copy=True), requires_grad)


@dataclass
class _Record:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """Ordered op records; use as a context manager to start recording."""

    records: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.records)


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _active_tape():
    st = _stack()
    return st[-1] if st else None


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(out: np.ndarray, inputs: Sequence[Tensor], bwd) -> Tensor:
    if not np.isfinite(out).all():
        raise NonFiniteError("op produced NaN or Inf")
    track = any(t.requires_grad for t in inputs)
    res = Tensor(out, requires_grad=track)
    tape = _active_tape()
    if track and tape is not None:
        tape.records.append(_Record(tuple(inputs), res, bwd))
    return res


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    return np.asarray(g.sum(), dtype=g.dtype) if _is_scalar(t) and g.ndim else g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "mul")
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xs = x.data
    x2 = xs * xs
    t = np.tanh(_GELU_C * xs * (1.0 + 0.044715 * x2))
    out = 0.5 * xs * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xs * (1.0 - t * t) * du),)

    return _emit(out, (x,), bwd)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(m,k)@(k,n), or batched (B,m,k)@(B,k,n) with equal batch extent."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bwd(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _emit(a.data @ b.data, (a, b), bwd)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` to every row of ``x`` along its last axis."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: {x.shape} + {b.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return _emit(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)))


def rotate_pairs(x: Tensor, angles: Tensor) -> Tensor:
    """Rotate consecutive pairs (x[..., 2i], x[..., 2i+1]) by angles[..., i]."""
    if x.shape[-1] % 2 or angles.shape != x.shape[:-1] + (x.shape[-1] // 2,):
        raise ShapeError(f"rotate_pairs: x {x.shape}, angles {angles.shape}")
    c, s = np.cos(angles.data), np.sin(angles.data)
    x0, x1 = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    y0, y1 = out[..., 0::2], out[..., 1::2]

    def bwd(g):
        g0, g1 = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = g0 * c + g1 * s
        gx[..., 1::2] = -g0 * s + g1 * c
        return gx, g1 * y0 - g0 * y1

    return _emit(out, (x, angles), bwd)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by gamma and shift by beta."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    axes = tuple(range(x.data.ndim - 1))

    def bwd(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _emit(xhat * gamma.data + beta.data, (x, gamma, beta), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit(p, (x,), bwd)


# ---------------------------------------------------------------- reductions

def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of (a - b)**2, as a 0-d tensor."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size

    def bwd(g):
        gd = (2.0 / n) * g * diff
        return gd, -gd

    return _emit(np.asarray((diff * diff).mean(), dtype=diff.dtype), (a, b), bwd)


def sum_all(x: Tensor) -> Tensor:
    return _emit(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


# ---------------------------------------------------------------- structural

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: {x.shape} -> {shape}")
    return _emit(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),))


def repeat(x: Tensor, n: int, axis: int) -> Tensor:
    """Tile an axis of extent 1 to extent ``n``."""
    if x.shape[axis] != 1:
        raise ShapeError(f"repeat: axis {axis} of {x.shape} must have extent 1")
    return _emit(np.repeat(x.data, n, axis=axis), (x,),
                 lambda g: (g.sum(axis=axis, keepdims=True),))


def take_rows(table: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D table; index -1 yields a zero row."""
    idx = np.asarray(index, dtype=np.int64)
    rows = table.shape[0]
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_rows: table {table.shape}, index {idx.shape}")
    if ((idx < -1) | (idx >= rows)).any():
        raise IndexError(f"take_rows: index out of range for {rows} rows")
    live = idx >= 0
    out = np.zeros((idx.size, table.shape[1]), dtype=table.dtype)
    out[live] = table.data[idx[live]]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx[live], g[live])
        return (gt,)

    return _emit(out, (table,), bwd)


_OPS = {
    "add": add, "mul": mul, "matmul": matmul, "rotate_pairs": rotate_pairs,
    "layernorm": layernorm, "softmax": softmax, "gelu": gelu, "mse": mse,
}


def forward_op(name: str, *inputs) -> Tensor:
    """Dispatch one of the named primitive ops."""
    try:
        fn = _OPS[name]
    except KeyError:
        raise ValueError(f"unknown op kind {name!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------- gradients

def backward(loss: Tensor, params: Sequence[Tensor], tape: Tape | None = None) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. each tensor in ``params``.

    The tape is only read, so calling this twice gives the same answer.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = tape if tape is not None else _active_tape()
    if tape is None or not tape.records:
        raise DetachedError("backward: no recorded ops")

    seen = set()
    for rec in tape.records:
        seen.update(id(t) for t in rec.inputs)
    for p in params:
        if id(p) not in seen:
            raise DetachedError(f"parameter {p!r} was not used on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.output))
        if g is None:
            continue
        for t, gt in zip(rec.inputs, rec.backward(g)):
            if not t.requires_grad or gt is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = np.asarray(gt, dtype=t.dtype).reshape(t.shape)
    return [np.array(grads.get(id(p), np.zeros_like(p.data)), dtype=p.dtype).reshape(p.shape)
            for p in params]


def finite_diff_check(f: Callable[[Tensor], Tensor], w, eps: float = 1e-5,
                      coords: Sequence[int] | None = None) -> float:
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|), central differences.

    ``coords`` restricts the check to a subset of flat indices.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    w0 = np.array(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    wt = Tensor(w0.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(wt)
        (g_ad,) = backward(loss, [wt], tape) if tape.records else [np.zeros_like(w0)]
    g_ad = g_ad.ravel()

    def value(arr):
        v = f(Tensor(arr)).item()
        if not np.isfinite(v):
            raise NonFiniteError("f evaluated to a non-finite value")
        return v

    flat = w0.ravel()
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        g_fd = (value(plus.reshape(w0.shape)) - value(minus.reshape(w0.shape))) / (2 * eps)
        worst = max(worst, abs(g_ad[i] - g_fd) / max(1.0, abs(g_ad[i])))
    return worst
