"""Dense NCHW tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous numpy array of rank <= 4. Every
differentiable operation records its parents and a backward closure on the
result; :meth:`Tensor.backward` walks that tape in reverse topological order
and accumulates gradients into the leaves that asked for them.

Operation results are treated as immutable values. The one sanctioned
mutation is an optimizer rebinding ``param.data`` between steps.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError

MAX_RANK = 4
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording on the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in FLOAT_DTYPES else np.float32
        dtype = np.dtype(dtype)
        if dtype not in FLOAT_DTYPES:
            raise ArgumentError(f"unsupported dtype {dtype}; use float32 or float64")
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds {MAX_RANK}")
        if any(e < 1 for e in arr.shape):
            raise DimensionError(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        return t

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dims(self) -> tuple:
        """Extents padded to (N, C, H, W) with leading size-1 axes."""
        return (1,) * (MAX_RANK - self.data.ndim) + self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def astype(self, dtype) -> "Tensor":
        """Copy into a new leaf of ``dtype`` keeping ``requires_grad``."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- differentiation -----------------------------------------------
    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise ArgumentError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ArgumentError("implicit backward needs a single-element output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise DimensionError(f"gradient shape {grad.shape} != tensor shape {self.shape}")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        pending = {id(self): grad}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as an op result, recording ``backward`` when needed.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce_pair(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return a, b


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Broadcasting elementwise product."""
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op(ad * bd, (a, b), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors with identical dims."""
    if a.dims != b.dims:
        raise DimensionError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    if a.shape != b.shape:
        b = reshape(b, a.shape)
    return mul(a, b)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return make_op(x.data * c, (x,), lambda g: (g * c,))


def unary(x: Tensor, value: np.ndarray, local_grad: Callable[[], np.ndarray]) -> Tensor:
    """Elementwise op whose derivative is ``local_grad()`` (evaluated lazily)."""
    return make_op(value, (x,), lambda g: (g * local_grad(),))


# -- shape -----------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    if out.ndim > MAX_RANK:
        raise DimensionError(f"rank {out.ndim} exceeds {MAX_RANK}")
    return make_op(out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op(ad @ bd, (a, b), backward)


# -- channel plumbing ------------------------------------------------------

def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape
    dtype = x.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[:, start:stop] = g
        return (full,)

    return make_op(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward)


def split_channels(x: Tensor, at: int) -> tuple[Tensor, Tensor]:
    """Split channels into ``[0, at)`` and ``[at, C)``."""
    if x.ndim < 2:
        raise DimensionError(f"split_channels needs a channel axis, got shape {x.shape}")
    c = x.shape[1]
    if not 0 < at < c:
        raise ArgumentError(f"split point {at} outside (0, {c})")
    return channel_slice(x, 0, at), channel_slice(x, at, c)


def split_sizes(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise DimensionError(f"split sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    out, start = [], 0
    for s in sizes:
        out.append(channel_slice(x, start, start + s) if s else None)
        start += s
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along channels, ``a`` first."""
    if a.ndim != b.ndim or a.ndim < 2 or a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise DimensionError(f"concat_channels needs matching N,H,W: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    data = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=1)
    return make_op(data, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


# -- verification oracle -----------------------------------------------------

def _scalar_value(y) -> float:
    v = y.data if isinstance(y, Tensor) else np.asarray(y)
    if v.size != 1:
        raise DimensionError(f"function must return a scalar, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"non-finite function value {v}")
    return v


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x`` (computed in float64)."""
    base = np.array(x.data, dtype=np.float64)
    flat = base.reshape(-1)
    out = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar_value(f(Tensor(base, dtype=np.float64)))
            flat[i] = orig - eps
            fm = _scalar_value(f(Tensor(base, dtype=np.float64)))
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return Tensor(out.reshape(base.shape), dtype=np.float64)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return num / den


def gradcheck(f: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-4) -> list[float]:
    """Compare reverse-mode and central-difference gradients of ``f()``.

    ``f`` closes over ``tensors`` (float64 leaves); each is perturbed in place
    and restored. Returns the relative error per tensor.
    """
    for t in tensors:
        if t.dtype != np.float64:
            raise ArgumentError("gradcheck requires float64 tensors")
        t.requires_grad = True
        t.grad = None
    f().backward()
    errors = []
    with no_grad():
        for t in tensors:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            numeric = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = _scalar_value(f())
                flat[i] = orig - eps
                fm = _scalar_value(f())
                flat[i] = orig
                numeric[i] = (fp - fm) / (2.0 * eps)
            errors.append(relative_error(analytic, numeric.reshape(t.shape)))
    return errors
