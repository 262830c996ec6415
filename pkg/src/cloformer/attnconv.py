"""AttnConv: shared-weight local aggregation gated by context-aware weights.

The local branch of a Clo block. ``V`` is aggregated by a depth-wise
convolution (weights shared across positions); ``Q`` and ``K`` are each
smoothed by their own depth-wise convolution, multiplied elementwise, pushed
through an FC / Swish / FC stack and squashed by Tanh into (-1, 1). The
squashed map multiplies the aggregated ``V`` token by token.

Four alternative local operators are provided for ablations, all sharing the
(q, k, v) -> output shape contract of the full operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, DimensionError
from .init import conv_normal, trunc_normal
from .layers import ACTIVATIONS, Conv2dParams, LinearParams, _record, activation, dwconv2d, fully_connected
from .tensor import Tensor, hadamard, make_op, scale

LOCAL_KINDS = ("full", "shared_only", "context_only", "window_attn", "window_attn_plus_shared")


@dataclass
class AttnConvParams:
    """Parameters and wiring of one local branch over ``C_l`` channels.

    ``fcs`` holds the gate's FC stack: empty for a Tanh-only gate, two layers
    for the default FC-Swish-FC, one more per extra (Swish, FC) pair.
    """

    channels: int
    kernel: int
    d: int
    kind: str = "full"
    dw_q: Optional[Conv2dParams] = None
    dw_k: Optional[Conv2dParams] = None
    dw_v: Optional[Conv2dParams] = None
    fcs: list = field(default_factory=list)
    use_k: bool = True
    inner_act: Optional[str] = "swish"
    outer_act: Optional[str] = "tanh"
    swish_beta: float = 1.0

    def __post_init__(self):
        if self.kind not in LOCAL_KINDS:
            raise ArgumentError(f"unknown local kind {self.kind!r}; expected one of {LOCAL_KINDS}")
        if self.d < 1:
            raise ArgumentError(f"gating divisor d must be >= 1, got {self.d}")
        if self.kernel % 2 == 0:
            raise ArgumentError(f"AttnConv kernel must be odd, got {self.kernel}")
        for act in (self.inner_act, self.outer_act):
            if act is not None and act not in ACTIVATIONS:
                raise ArgumentError(f"unknown activation {act!r}")
        for name in ("dw_q", "dw_k", "dw_v"):
            conv = getattr(self, name)
            if conv is not None and (not conv.depthwise or conv.stride != 1 or conv.c_in != self.channels):
                raise ArgumentError(f"{name} must be a stride-1 depth-wise conv over {self.channels} channels")
        for fc in self.fcs:
            if fc.c_in != self.channels or fc.c_out != self.channels:
                raise ArgumentError(f"gate FCs must be square over {self.channels} channels")

    @property
    def nonlin_depth(self) -> int:
        return max(len(self.fcs) - 1, 0)

    @property
    def streams(self) -> tuple[str, ...]:
        """Which of q, k, v this operator consumes."""
        if self.kind == "shared_only":
            return ("v",)
        if self.kind in ("full", "context_only") and not self.use_k:
            return ("q", "v")
        return ("q", "k", "v")

    @property
    def heads(self) -> int:
        return self.channels // self.d

    def named(self, prefix: str):
        for name in ("dw_q", "dw_k", "dw_v"):
            conv = getattr(self, name)
            if conv is not None:
                yield from conv.named(f"{prefix}.{name}")
        for i, fc in enumerate(self.fcs, start=1):
            yield from fc.named(f"{prefix}.fc{i}")

    def with_padding(self, mode: str) -> "AttnConvParams":
        convs = {n: replace(getattr(self, n), padding=mode)
                 for n in ("dw_q", "dw_k", "dw_v") if getattr(self, n) is not None}
        return replace(self, **convs)


def _dw(c: int, k: int, rng, dtype, padding: str) -> Conv2dParams:
    return Conv2dParams(Tensor(conv_normal(rng, (c, 1, k, k)), dtype=dtype, requires_grad=True),
                        Tensor(np.zeros(c), dtype=dtype, requires_grad=True),
                        stride=1, padding=padding, groups=c)


def _fc(c_in: int, c_out: int, rng, dtype) -> LinearParams:
    return LinearParams(Tensor(trunc_normal(rng, (c_out, c_in)), dtype=dtype, requires_grad=True),
                        Tensor(np.zeros(c_out), dtype=dtype, requires_grad=True))


def init_attnconv(channels: int, kernel: int, d: int, rng: np.random.Generator, *,
                  kind: str = "full", use_k: bool = True, qk_conv: bool = True,
                  gate_fcs: int = 2, inner_act: Optional[str] = "swish",
                  outer_act: Optional[str] = "tanh", swish_beta: float = 1.0,
                  padding: str = "zero", dtype=np.float32) -> AttnConvParams:
    """Allocate a local branch. Which members exist depends on ``kind``."""
    if kind not in LOCAL_KINDS:
        raise ArgumentError(f"unknown local kind {kind!r}; expected one of {LOCAL_KINDS}")
    if gate_fcs == 1:
        raise ArgumentError("gate FC stack needs 0 or >= 2 layers")
    gated = kind in ("full", "context_only")
    shared = kind in ("full", "shared_only", "window_attn_plus_shared")
    dw_q = _dw(channels, kernel, rng, dtype, padding) if gated and qk_conv else None
    dw_k = _dw(channels, kernel, rng, dtype, padding) if gated and qk_conv and use_k else None
    dw_v = _dw(channels, kernel, rng, dtype, padding) if shared else None
    fcs = [_fc(channels, channels, rng, dtype) for _ in range(gate_fcs)] if gated else []
    return AttnConvParams(channels, kernel, d, kind, dw_q, dw_k, dw_v, fcs, use_k,
                          inner_act, outer_act, swish_beta)


def gen_context_weights(q: Tensor, k: Optional[Tensor], p: AttnConvParams) -> Tensor:
    """Context-aware weights Tanh(FC(Swish(FC(DW(q) * DW(k)))) / sqrt(d)).

    With ``p.use_k`` false, ``k`` is ignored and the product is ``DW(q)`` alone.
    """
    if p.use_k:
        if k is None or q.shape != k.shape:
            raise DimensionError(f"q and k must share a shape, got {q.shape} and {None if k is None else k.shape}")
    if q.ndim != 4 or q.shape[1] != p.channels:
        raise DimensionError(f"expected (N, {p.channels}, H, W), got {q.shape}")
    ql = dwconv2d(q, p.dw_q) if p.dw_q is not None else q
    if p.use_k:
        kl = dwconv2d(k, p.dw_k) if p.dw_k is not None else k
        t = hadamard(ql, kl)
    else:
        t = ql
    if p.fcs:
        t = fully_connected(t, p.fcs[0])
        for fc in p.fcs[1:]:
            if p.inner_act is not None:
                t = activation(p.inner_act, t, beta=p.swish_beta)
            t = fully_connected(t, fc)
    t = scale(t, 1.0 / math.sqrt(p.d))
    if p.outer_act is not None:
        t = activation(p.outer_act, t, beta=p.swish_beta)
    return t


def attnconv_forward(q: Tensor, k: Tensor, v: Tensor, p: AttnConvParams,
                     taps: Optional[dict] = None) -> Tensor:
    """Full AttnConv: context weights times the shared-weight aggregate of ``v``."""
    if v.shape != q.shape:
        raise DimensionError(f"q and v must share a shape, got {q.shape} and {v.shape}")
    v_s = dwconv2d(v, p.dw_v)
    out = hadamard(gen_context_weights(q, k, p), v_s)
    if taps is not None:
        taps["v_s"] = v_s
        taps["out"] = out
    return out


def _shared_only(q, k, v, p, taps=None):
    out = dwconv2d(v, p.dw_v)
    if taps is not None:
        taps["v_s"] = out
        taps["out"] = out
    return out


def _context_only(q, k, v, p, taps=None):
    out = hadamard(gen_context_weights(q, k, p), v)
    if taps is not None:
        taps["out"] = out
    return out


def _window_attn(q, k, v, p, taps=None):
    out = window_attention(q, k, v, p.kernel, p.heads)
    if taps is not None:
        taps["out"] = out
    return out


def _window_attn_plus_shared(q, k, v, p, taps=None):
    v_s = dwconv2d(v, p.dw_v)
    out = window_attention(q, k, v_s, p.kernel, p.heads)
    if taps is not None:
        taps["v_s"] = v_s
        taps["out"] = out
    return out


_LOCAL_OPS = {
    "full": attnconv_forward,
    "shared_only": _shared_only,
    "context_only": _context_only,
    "window_attn": _window_attn,
    "window_attn_plus_shared": _window_attn_plus_shared,
}


def build_local_ablation(kind: str) -> Callable:
    """Return the local operator ``(q, k, v, p, taps=None) -> Tensor`` for ``kind``."""
    try:
        return _LOCAL_OPS[kind]
    except KeyError:
        raise ArgumentError(f"unknown local kind {kind!r}; expected one of {LOCAL_KINDS}") from None


def local_forward(q, k, v, p: AttnConvParams, taps: Optional[dict] = None) -> Tensor:
    return _LOCAL_OPS[p.kind](q, k, v, p, taps)


# -- window self-attention ------------------------------------------------------

def _to_windows(a: np.ndarray, heads: int, w: int) -> np.ndarray:
    n, c, hp, wp = a.shape
    d = c // heads
    a = a.reshape(n, heads, d, hp // w, w, wp // w, w)
    a = a.transpose(0, 1, 3, 5, 4, 6, 2)
    return a.reshape(n, heads, (hp // w) * (wp // w), w * w, d)


def _from_windows(a: np.ndarray, shape: tuple, heads: int, w: int) -> np.ndarray:
    n, c, hp, wp = shape
    d = c // heads
    a = a.reshape(n, heads, hp // w, wp // w, w, w, d)
    a = a.transpose(0, 1, 6, 2, 4, 3, 5)
    return a.reshape(shape)


def window_attention(q: Tensor, k: Tensor, v: Tensor, window: int, heads: int) -> Tensor:
    """Multi-head softmax attention inside non-overlapping ``window`` x ``window`` tiles.

    Extents that are not a multiple of the window are zero-padded; padded
    keys are masked out and padded queries are cropped from the output.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise DimensionError(f"window attention needs equal NCHW shapes: {q.shape}, {k.shape}, {v.shape}")
    n, c, h, w_ = q.shape
    if c % heads:
        raise DimensionError(f"{c} channels do not split into {heads} heads")
    d = c // heads
    hp = -(-h // window) * window
    wp = -(-w_ // window) * window
    padw = ((0, 0), (0, 0), (0, hp - h), (0, wp - w_))
    Q, K, V = (_to_windows(np.pad(t.data, padw), heads, window) for t in (q, k, v))
    valid = np.zeros((1, 1, hp, wp), dtype=bool)
    valid[..., :h, :w_] = True
    key_ok = _to_windows(valid, 1, window)[0, 0, :, :, 0]  # (windows, T)
    sc = q.dtype.type(1.0 / math.sqrt(d))
    S = (Q @ np.swapaxes(K, -1, -2)) * sc
    S = np.where(key_ok[None, None, :, None, :], S, -np.inf)
    P = np.exp(S - S.max(axis=-1, keepdims=True))
    P /= P.sum(axis=-1, keepdims=True)
    O = P @ V
    full_shape = (n, c, hp, wp)
    y = np.ascontiguousarray(_from_windows(O, full_shape, heads, window)[:, :, :h, :w_])
    T = window * window
    _record("window_attn", 2 * n * c * (hp // window) * (wp // window) * T * T)

    def backward(g):
        G = _to_windows(np.pad(g, padw), heads, window)
        dV = np.swapaxes(P, -1, -2) @ G
        dP = G @ np.swapaxes(V, -1, -2)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
        dQ = (dS @ K) * sc
        dK = (np.swapaxes(dS, -1, -2) @ Q) * sc

        def back(a):
            return np.ascontiguousarray(_from_windows(a, full_shape, heads, window)[:, :, :h, :w_])

        return back(dQ), back(dK), back(dV)

    return make_op(y, (q, k, v), backward)
