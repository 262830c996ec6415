"""Clo block (shared QKV, local AttnConv + pooled global attention, fusion FC) and ConvFFN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attnconv import AttnConvParams, init_attnconv, local_forward
from .errors import ArgumentError, DimensionError
from .init import conv_normal, trunc_normal
from .layers import (Conv2dParams, LinearParams, _record, activation, avg_pool2d, drop_path,
                     dwconv2d, fully_connected, layer_norm_channels, softmax_tokens)
from .tensor import Tensor, add, concat_channels, matmul, reshape, scale, split_sizes, transpose


@dataclass
class NormParams:
    gain: Tensor
    offset: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.offset", self.offset


def norm(x: Tensor, p: NormParams) -> Tensor:
    return layer_norm_channels(x, p.gain, p.offset)


def init_norm(c: int, dtype=np.float32) -> NormParams:
    return NormParams(Tensor(np.ones(c), dtype=dtype, requires_grad=True),
                      Tensor(np.zeros(c), dtype=dtype, requires_grad=True))


def init_linear(c_in: int, c_out: int, rng, dtype=np.float32, bias: bool = True) -> LinearParams:
    return LinearParams(Tensor(trunc_normal(rng, (c_out, c_in)), dtype=dtype, requires_grad=True),
                        Tensor(np.zeros(c_out), dtype=dtype, requires_grad=True) if bias else None)


def init_dw(c: int, k: int, rng, dtype=np.float32, stride: int = 1) -> Conv2dParams:
    return Conv2dParams(Tensor(conv_normal(rng, (c, 1, k, k)), dtype=dtype, requires_grad=True),
                        Tensor(np.zeros(c), dtype=dtype, requires_grad=True),
                        stride=stride, groups=c)


# -- global branch ---------------------------------------------------------------

def global_branch_forward(q: Tensor, k: Tensor, v: Tensor, stride: int, heads: int) -> Tensor:
    """Multi-head attention of every query token over average-pooled keys and values."""
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise DimensionError(f"global branch needs equal NCHW shapes: {q.shape}, {k.shape}, {v.shape}")
    n, c, h, w = q.shape
    if heads < 1 or c % heads:
        raise DimensionError(f"{c} global channels do not split into {heads} heads")
    d = c // heads
    kp = avg_pool2d(k, stride)
    vp = avg_pool2d(v, stride)
    t = kp.shape[2] * kp.shape[3]
    qt = transpose(reshape(q, (n, heads, d, h * w)), (0, 1, 3, 2))    # (N, h, HW, d)
    kt = reshape(kp, (n, heads, d, t))                               # (N, h, d, T)
    vt = transpose(reshape(vp, (n, heads, d, t)), (0, 1, 3, 2))      # (N, h, T, d)
    attn = softmax_tokens(scale(matmul(qt, kt), 1.0 / math.sqrt(d)))  # (N, h, HW, T)
    out = matmul(attn, vt)                                           # (N, h, HW, d)
    _record("attn", 2 * n * h * w * c * t)
    return reshape(transpose(out, (0, 1, 3, 2)), (n, c, h, w))


# -- Clo block -----------------------------------------------------------------------

@dataclass
class CloBlockParams:
    channels: int
    head_dim: int
    split: tuple
    pool_stride: int
    norm1: NormParams
    qkv: LinearParams
    local: Optional[AttnConvParams]
    fuse: LinearParams
    drop_path: float = 0.0

    def __post_init__(self):
        cl, cg = self.split
        if cl + cg != self.channels:
            raise ArgumentError(f"split {self.split} does not sum to {self.channels}")
        if cl % self.head_dim or cg % self.head_dim:
            raise ArgumentError(f"split {self.split} is not a multiple of head_dim {self.head_dim}")
        if (cl > 0) != (self.local is not None):
            raise ArgumentError("local params must exist exactly when the local split is non-zero")
        if self.qkv.c_out != sum(self.qkv_sizes()):
            raise ArgumentError(f"qkv projects to {self.qkv.c_out} channels, layout needs {sum(self.qkv_sizes())}")

    @property
    def global_heads(self) -> int:
        return self.split[1] // self.head_dim

    def qkv_sizes(self) -> list:
        """Channel layout of the QKV projection: [q_l, q_g, k_l, k_g, v_l, v_g]."""
        cl, cg = self.split
        streams = self.local.streams if self.local is not None else ()
        return [cl if "q" in streams else 0, cg,
                cl if "k" in streams else 0, cg,
                cl if "v" in streams else 0, cg]

    def named(self, prefix: str):
        yield from self.norm1.named(f"{prefix}.norm1")
        yield from self.qkv.named(f"{prefix}.qkv")
        if self.local is not None:
            yield from self.local.named(f"{prefix}.local")
        yield from self.fuse.named(f"{prefix}.fuse")


def init_clo_block(channels: int, head_dim: int, split, pool_stride: int, kernel: int,
                   rng: np.random.Generator, ablation=None, drop_rate: float = 0.0,
                   dtype=np.float32) -> CloBlockParams:
    cl, cg = split
    local = None
    if cl:
        kw = {}
        if ablation is not None:
            kw = dict(kind=ablation.local_kind, use_k=ablation.use_k, qk_conv=ablation.qk_conv,
                      gate_fcs=ablation.gate_fcs, inner_act=ablation.inner_act,
                      outer_act=ablation.outer_act, swish_beta=ablation.swish_beta)
        local = init_attnconv(cl, kernel, head_dim, rng, dtype=dtype, **kw)
    streams = local.streams if local is not None else ()
    n_out = 3 * cg + cl * len(streams)
    return CloBlockParams(channels, head_dim, tuple(split), pool_stride, init_norm(channels, dtype),
                          init_linear(channels, n_out, rng, dtype), local,
                          init_linear(channels, channels, rng, dtype), drop_rate)


def clo_block_forward(x: Tensor, p: CloBlockParams, rng: Optional[np.random.Generator] = None,
                      training: bool = False, taps: Optional[dict] = None) -> Tensor:
    """x + drop_path(FC(concat(local(...), global(...)))) over a pre-normed shared QKV."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise DimensionError(f"Clo block expects (N, {p.channels}, H, W), got {x.shape}")
    qkv = fully_connected(norm(x, p.norm1), p.qkv)
    q_l, q_g, k_l, k_g, v_l, v_g = split_sizes(qkv, p.qkv_sizes())
    outs = []
    if p.local is not None:
        local_taps = {} if taps is not None else None
        outs.append(local_forward(q_l, k_l, v_l, p.local, local_taps))
        if taps is not None:
            taps.update({f"local.{k}": v for k, v in local_taps.items()})
    if p.split[1]:
        g = global_branch_forward(q_g, k_g, v_g, p.pool_stride, p.global_heads)
        outs.append(g)
        if taps is not None:
            taps["global.out"] = g
    mixed = concat_channels(*outs) if len(outs) == 2 else outs[0]
    out = fully_connected(mixed, p.fuse)
    return add(x, drop_path(out, p.drop_path, rng, training))


# -- ConvFFN -------------------------------------------------------------------------

@dataclass
class ConvFFNParams:
    norm: NormParams
    fc_in: LinearParams
    dw: Conv2dParams
    fc_out: LinearParams
    skip_dw: Optional[Conv2dParams] = None
    skip_fc: Optional[LinearParams] = None
    drop_path: float = 0.0

    @property
    def cross_stage(self) -> bool:
        return self.skip_dw is not None

    @property
    def variant(self) -> str:
        return "cross_stage" if self.cross_stage else "in_stage"

    def named(self, prefix: str):
        yield from self.norm.named(f"{prefix}.norm")
        yield from self.fc_in.named(f"{prefix}.fc_in")
        yield from self.dw.named(f"{prefix}.dw")
        yield from self.fc_out.named(f"{prefix}.fc_out")
        if self.cross_stage:
            yield from self.skip_dw.named(f"{prefix}.skip_dw")
            yield from self.skip_fc.named(f"{prefix}.skip_fc")


def init_convffn(channels: int, rng: np.random.Generator, ratio: int = 4, kernel: int = 5,
                 out_channels: Optional[int] = None, drop_rate: float = 0.0,
                 dtype=np.float32) -> ConvFFNParams:
    """In-stage ConvFFN, or the stage-transition form when ``out_channels`` is given."""
    hidden = ratio * channels
    cross = out_channels is not None
    c_out = out_channels if cross else channels
    stride = 2 if cross else 1
    return ConvFFNParams(
        init_norm(channels, dtype),
        init_linear(channels, hidden, rng, dtype),
        init_dw(hidden, kernel, rng, dtype, stride),
        init_linear(hidden, c_out, rng, dtype),
        init_dw(channels, kernel, rng, dtype, 2) if cross else None,
        init_linear(channels, c_out, rng, dtype) if cross else None,
        drop_rate,
    )


def convffn_forward(x: Tensor, p: ConvFFNParams, variant: Optional[str] = None,
                    rng: Optional[np.random.Generator] = None, training: bool = False) -> Tensor:
    """FC -> GELU -> DWconv -> FC with a residual.

    The cross-stage form halves H and W in the DWconv and maps to the next
    stage's width; its skip path downsamples the normalized input with a
    stride-2 DWconv and widens with an FC. Taking the skip after the norm keeps
    activation scale from compounding across stages.
    """
    if variant is not None and variant != p.variant:
        raise ArgumentError(f"params are {p.variant}, asked for {variant}")
    if x.ndim != 4 or x.shape[1] != p.fc_in.c_in:
        raise DimensionError(f"ConvFFN expects (N, {p.fc_in.c_in}, H, W), got {x.shape}")
    if p.cross_stage and (x.shape[2] % 2 or x.shape[3] % 2):
        raise DimensionError(f"cross-stage ConvFFN needs even H and W, got {x.shape[2]}x{x.shape[3]}")
    xn = norm(x, p.norm)
    hdn = activation("gelu", fully_connected(xn, p.fc_in))
    main = fully_connected(dwconv2d(hdn, p.dw), p.fc_out)
    main = drop_path(main, p.drop_path, rng, training)
    if p.cross_stage:
        return add(fully_connected(dwconv2d(xn, p.skip_dw), p.skip_fc), main)
    return add(x, main)
