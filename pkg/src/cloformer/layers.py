"""Layer primitives: FC, convolutions, pooling, softmax, activations, norm, drop-path.

Every layer is a fused numpy forward with a hand-written backward, recorded
on the tape through :func:`make_op`. Multiply-accumulates are reported to an
optional thread-local counter (see :func:`count_macs`) so that analytic FLOP
accounting can be cross-checked against what the forward pass really does.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ArgumentError, DimensionError, NumericError
from .tensor import Tensor, make_op, mul, unary

PADDING_MODES = ("zero", "circular")
ACTIVATIONS = ("gelu", "swish", "tanh", "relu", "silu", "sigmoid")

_mac_state = threading.local()


@contextmanager
def count_macs():
    """Collect multiply-accumulate counts per op kind on this thread.

    Yields a dict that is filled while the block runs.
    """
    prev = getattr(_mac_state, "counter", None)
    counter: dict = {}
    _mac_state.counter = counter
    try:
        yield counter
    finally:
        _mac_state.counter = prev


def _record(kind: str, macs: int) -> None:
    counter = getattr(_mac_state, "counter", None)
    if counter is not None:
        counter[kind] = counter.get(kind, 0) + int(macs)


@dataclass
class LinearParams:
    weight: Tensor  # (C_out, C_in)
    bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise DimensionError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def named(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


@dataclass
class Conv2dParams:
    weight: Tensor  # (C_out, C_in // groups, k, k)
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: str = "zero"
    groups: int = 1
    pad: Optional[int] = None  # None means same-padding (k - 1) // 2

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise DimensionError(f"conv weight must be (C_out, C_in/g, k, k), got {self.weight.shape}")
        if self.padding not in PADDING_MODES:
            raise ArgumentError(f"padding mode must be one of {PADDING_MODES}, got {self.padding!r}")
        if self.pad is None:
            if self.kernel % 2 == 0:
                raise ArgumentError(f"same-padded convolution needs an odd kernel, got {self.kernel}")
            self.pad = (self.kernel - 1) // 2
        if self.stride < 1:
            raise ArgumentError(f"stride must be >= 1, got {self.stride}")
        c_out = self.weight.shape[0]
        if self.groups < 1 or c_out % self.groups:
            raise ArgumentError(f"groups={self.groups} must divide C_out={c_out}")

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def depthwise(self) -> bool:
        return self.groups == self.c_out == self.c_in and self.weight.shape[1] == 1

    def named(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


def out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


# -- fully connected ---------------------------------------------------------

def fully_connected(x: Tensor, p: LinearParams) -> Tensor:
    """Per-location affine map over channels; (N, C_in, ...) -> (N, C_out, ...)."""
    if x.ndim < 2 or x.shape[1] != p.c_in:
        raise DimensionError(f"fully_connected expects {p.c_in} input channels, got shape {x.shape}")
    shape = x.shape
    n, c = shape[0], shape[1]
    x3 = x.data.reshape(n, c, -1)
    w = p.weight.data
    y = np.matmul(w, x3)
    if p.bias is not None:
        y += p.bias.data[:, None]
    _record("fc", p.c_in * p.c_out * n * x3.shape[2])
    out_shape = (n, p.c_out) + shape[2:]

    def backward(g):
        g3 = g.reshape(n, p.c_out, -1)
        gx = np.matmul(w.T, g3).reshape(shape) if x.requires_grad else None
        gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])) if p.weight.requires_grad else None
        if p.bias is None:
            return gx, gw
        gb = g3.sum(axis=(0, 2)) if p.bias.requires_grad else None
        return gx, gw, gb

    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return make_op(y.reshape(out_shape), parents, backward)


# -- convolutions -------------------------------------------------------------

def _pad(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    width = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    return np.pad(x, width, mode="wrap" if mode == "circular" else "constant")


def _unpad(g: np.ndarray, pad: int, mode: str, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_pad`."""
    if pad == 0:
        return g
    if mode == "zero":
        return np.ascontiguousarray(g[:, :, pad:pad + h, pad:pad + w])
    rows = np.arange(-pad, h + pad) % h
    cols = np.arange(-pad, w + pad) % w
    tmp = np.zeros(g.shape[:2] + (h, g.shape[3]), dtype=g.dtype)
    np.add.at(tmp, (slice(None), slice(None), rows), g)
    out = np.zeros(g.shape[:2] + (h, w), dtype=g.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), cols), tmp)
    return out


def _check_spatial(x: Tensor, p: Conv2dParams) -> tuple[int, int]:
    if x.ndim != 4:
        raise DimensionError(f"convolution expects NCHW input, got shape {x.shape}")
    h, w = x.shape[2:]
    ho, wo = out_extent(h, p.kernel, p.stride, p.pad), out_extent(w, p.kernel, p.stride, p.pad)
    if ho < 1 or wo < 1:
        raise DimensionError(f"convolution output would be empty for input {x.shape}")
    return ho, wo


def _live_taps(k: int, stride: int, n_out: int, pad: int, n_in: int, mode: str) -> list:
    """Kernel offsets that touch at least one real (non-zero-padding) input row."""
    if mode == "circular":
        return list(range(k))
    return [i for i in range(k) if any(pad <= i + stride * r < pad + n_in for r in range(n_out))]


def dwconv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Depth-wise k x k correlation, one kernel per channel."""
    if not p.depthwise:
        raise ArgumentError(f"dwconv2d needs depth-wise params, got weight {p.weight.shape}, groups={p.groups}")
    if x.ndim != 4 or x.shape[1] != p.c_in:
        raise DimensionError(f"dwconv2d expects {p.c_in} channels, got shape {x.shape}")
    ho, wo = _check_spatial(x, p)
    n, c, h, w = x.shape
    k, s, pad = p.kernel, p.stride, p.pad
    # Channels-last so every tap is a pass over contiguous channel vectors;
    # late-stage maps are only a few pixels wide.
    xl = np.ascontiguousarray(_pad(x.data, pad, p.padding).transpose(0, 2, 3, 1))
    wl = p.weight.data.reshape(c, k, k).transpose(1, 2, 0)
    ti = _live_taps(k, s, ho, pad, h, p.padding)
    tj = _live_taps(k, s, wo, pad, w, p.padding)
    span_h, span_w = s * (ho - 1) + 1, s * (wo - 1) + 1
    yl = np.zeros((n, ho, wo, c), dtype=x.dtype)
    tmp = np.empty_like(yl)
    for i in ti:
        for j in tj:
            np.multiply(xl[:, i:i + span_h:s, j:j + span_w:s], wl[i, j], out=tmp)
            yl += tmp
    if p.bias is not None:
        yl += p.bias.data
    y = np.ascontiguousarray(yl.transpose(0, 3, 1, 2))
    _record("dwconv", c * k * k * n * ho * wo)

    def backward(g):
        gx = gw = None
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        if x.requires_grad:
            gxl = np.zeros_like(xl)
            for i in ti:
                for j in tj:
                    gxl[:, i:i + span_h:s, j:j + span_w:s] += wl[i, j] * gl
            gx = _unpad(np.ascontiguousarray(gxl.transpose(0, 3, 1, 2)), pad, p.padding, h, w)
        if p.weight.requires_grad:
            gwl = np.zeros((k, k, c), dtype=x.dtype)
            for i in ti:
                for j in tj:
                    np.multiply(xl[:, i:i + span_h:s, j:j + span_w:s], gl, out=tmp)
                    gwl[i, j] = tmp.reshape(-1, c).sum(axis=0)
            gw = np.ascontiguousarray(gwl.transpose(2, 0, 1)).reshape(p.weight.shape)
        if p.bias is None:
            return gx, gw
        gb = gl.reshape(-1, c).sum(axis=0) if p.bias.requires_grad else None
        return gx, gw, gb

    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return make_op(y, parents, backward)


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Dense 2-D convolution (groups == 1); depth-wise params are routed to :func:`dwconv2d`."""
    if p.groups != 1:
        if p.depthwise:
            return dwconv2d(x, p)
        raise ArgumentError("only dense and depth-wise convolutions are supported")
    if x.ndim != 4 or x.shape[1] != p.c_in:
        raise DimensionError(f"conv2d expects {p.c_in} channels, got shape {x.shape}")
    ho, wo = _check_spatial(x, p)
    n, cin, h, w = x.shape
    k, s, pad, cout = p.kernel, p.stride, p.pad, p.c_out
    xp = _pad(x.data, pad, p.padding)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    wt = p.weight.data
    # (N, Cin, Ho, Wo, k, k) x (Cout, Cin, k, k) -> (N, Ho, Wo, Cout)
    y = np.tensordot(win, wt, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    if p.bias is not None:
        y += p.bias.data.reshape(1, cout, 1, 1)
    _record("conv", cin * cout * k * k * n * ho * wo)
    span_h, span_w = s * (ho - 1) + 1, s * (wo - 1) + 1

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + span_h:s, j:j + span_w:s] += np.einsum("nohw,oc->nchw", g, wt[:, :, i, j])
            gx = _unpad(gxp, pad, p.padding, h, w)
        if p.weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if p.bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3)) if p.bias.requires_grad else None
        return gx, gw, gb

    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return make_op(y, parents, backward)


# -- pooling & softmax ----------------------------------------------------------

def avg_pool2d(x: Tensor, stride: int) -> Tensor:
    """Non-overlapping ``stride`` x ``stride`` window means."""
    if stride < 1:
        raise ArgumentError(f"pool stride must be >= 1, got {stride}")
    if stride == 1:
        return x
    n, c, h, w = x.shape
    if h % stride or w % stride:
        raise DimensionError(f"pool stride {stride} does not divide spatial extent {h}x{w}")
    ho, wo = h // stride, w // stride
    y = x.data.reshape(n, c, ho, stride, wo, stride).mean(axis=(3, 5))
    _record("pool", n * c * h * w)
    inv = x.dtype.type(1.0 / (stride * stride))

    def backward(g):
        gx = np.broadcast_to((g * inv)[:, :, :, None, :, None], (n, c, ho, stride, wo, stride))
        return (gx.reshape(n, c, h, w),)

    return make_op(y, (x,), backward)


def softmax_tokens(scores: Tensor) -> Tensor:
    """Softmax along the last (key) axis."""
    d = scores.data
    if np.isnan(d).any():
        raise NumericError("softmax input contains NaN")
    e = np.exp(d - d.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_op(y, (scores,), backward)


# -- activations ---------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation(kind: str, x: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise nonlinearity; ``beta`` only affects swish (x * sigmoid(beta * x))."""
    d = x.data
    if kind == "relu":
        return unary(x, np.maximum(d, 0), lambda: (d > 0).astype(d.dtype))
    if kind == "tanh":
        # Saturated float values are held one ulp inside +-1.
        lim = np.nextafter(d.dtype.type(1), d.dtype.type(0))
        y = np.clip(np.tanh(d), -lim, lim)
        return unary(x, y, lambda: 1 - y * y)
    if kind == "sigmoid":
        y = _sigmoid(d)
        return unary(x, y, lambda: y * (1 - y))
    if kind in ("swish", "silu"):
        b = d.dtype.type(beta if kind == "swish" else 1.0)
        sg = _sigmoid(b * d)
        return unary(x, d * sg, lambda: sg + b * d * sg * (1 - sg))
    if kind == "gelu":
        cdf = 0.5 * (1 + erf(d / math.sqrt(2)))
        return unary(x, d * cdf, lambda: cdf + d * np.exp(-0.5 * d * d) / math.sqrt(2 * math.pi))
    raise ArgumentError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# -- normalization & regularization ---------------------------------------------

def layer_norm_channels(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize across channels at every (n, h, w), then apply a per-channel affine."""
    if eps <= 0:
        raise ArgumentError(f"eps must be positive, got {eps}")
    c = x.shape[1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise DimensionError(f"norm parameters must have shape ({c},), got {gain.shape}, {offset.shape}")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    d = x.data
    mu = d.mean(axis=1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    g_ = gain.data.reshape(bshape)
    y = xhat * g_ + offset.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * g_
            gx = rstd * (gh - gh.mean(axis=1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        ggain = (g * xhat).sum(axis=red) if gain.requires_grad else None
        goff = g.sum(axis=red) if offset.requires_grad else None
        return gx, ggain, goff

    return make_op(y, (x, gain, offset), backward)


def drop_path(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Per-sample stochastic depth on a residual branch."""
    if not 0 <= rate < 1:
        raise ArgumentError(f"drop-path rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ArgumentError("drop_path in training mode needs an explicit generator")
    keep = rng.random(x.shape[0]) >= rate
    mask = (keep / (1.0 - rate)).astype(x.dtype).reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return mul(x, Tensor._wrap(mask))
