"""CloFormer assembly: conv stem, four stages of (Clo block, ConvFFN), GAP + linear classifier."""

from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .block import (CloBlockParams, ConvFFNParams, NormParams, clo_block_forward, convffn_forward,
                    init_clo_block, init_convffn, init_linear, init_norm, norm)
from .errors import DimensionError, NumericError
from .init import conv_normal
from .layers import Conv2dParams, LinearParams, _record, activation, conv2d, fully_connected
from .specs import VariantSpec
from .tensor import Tensor, mean


@dataclass
class StemParams:
    kind: str
    convs: list
    norms: list

    def named(self, prefix: str):
        for i, conv in enumerate(self.convs, start=1):
            yield from conv.named(f"{prefix}.conv{i}")
        for i, nrm in enumerate(self.norms, start=1):
            yield from nrm.named(f"{prefix}.norm{i}")


@dataclass
class Model:
    spec: VariantSpec
    stem: StemParams
    stages: list  # per stage: list of (CloBlockParams, ConvFFNParams)
    head: LinearParams
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def named_parameters(self):
        yield from self.stem.named("stem")
        for i, stage in enumerate(self.stages, start=1):
            for j, (blk, ffn) in enumerate(stage):
                yield from blk.named(f"stage{i}.block{j}")
                yield from ffn.named(f"stage{i}.ffn{j}")
        yield from self.head.named("head")

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())

    def astype(self, dtype) -> "Model":
        """Deep copy with every parameter cast to ``dtype``."""
        m = copy.deepcopy(self)
        for t in m.parameters().values():
            t.data = t.data.astype(dtype)
            t.grad = None
        m.dtype = np.dtype(dtype)
        return m

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None


def _conv(c_in, c_out, k, stride, rng, dtype, pad=None) -> Conv2dParams:
    return Conv2dParams(Tensor(conv_normal(rng, (c_out, c_in, k, k)), dtype=dtype, requires_grad=True),
                        Tensor(np.zeros(c_out), dtype=dtype, requires_grad=True), stride=stride, pad=pad)


def _init_stem(kind: str, c: int, rng, dtype) -> StemParams:
    if kind == "patch_embed":
        return StemParams(kind, [_conv(3, c, 4, 4, rng, dtype, pad=0)], [init_norm(c, dtype)])
    half = c // 2
    convs = [_conv(3, half, 3, 2, rng, dtype), _conv(half, c, 3, 2, rng, dtype),
             _conv(c, c, 3, 1, rng, dtype), _conv(c, c, 3, 1, rng, dtype), _conv(c, c, 1, 1, rng, dtype)]
    norms = [init_norm(half, dtype)] + [init_norm(c, dtype) for _ in range(3)]
    return StemParams(kind, convs, norms)


def build_model(spec: VariantSpec, rng=0, dtype=np.float32) -> Model:
    """Allocate and initialise every parameter of ``spec``; deterministic given the seed.

    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    spec.validate()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dtype = np.dtype(dtype)
    ab = spec.ablation
    rates = np.linspace(0.0, spec.drop_path_max, spec.depth) if spec.depth > 1 else [0.0]
    stem = _init_stem(ab.stem, spec.stem_channels, rng, dtype)
    stages = []
    idx = 0
    for i, st in enumerate(spec.stages):
        layers = []
        for j in range(st.blocks):
            rate = float(rates[idx])
            idx += 1
            blk = init_clo_block(st.channels, st.head_dim, st.split, st.pool_stride, st.kernel,
                                 rng, ab, rate, dtype)
            last = j == st.blocks - 1 and i < 3
            nxt = spec.stages[i + 1].channels if last else None
            ffn = init_convffn(st.channels, rng, st.ffn_ratio, st.ffn_kernel, nxt, rate, dtype)
            layers.append((blk, ffn))
        stages.append(layers)
    head = init_linear(spec.stages[-1].channels, spec.num_classes, rng, dtype)
    return Model(spec, stem, stages, head, dtype)


def _check_input(x: Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"expected (N, 3, H, W) images, got {x.shape}")
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise DimensionError(f"H and W must be divisible by 32, got {x.shape[2]}x{x.shape[3]}")


def conv_stem(x: Tensor, m: Model) -> Tensor:
    """Images (N, 3, H, W) to stage-1 tokens (N, C1, H/4, W/4)."""
    _check_input(x)
    st = m.stem
    if st.kind == "patch_embed":
        return norm(conv2d(x, st.convs[0]), st.norms[0])
    for conv, nrm in zip(st.convs[:4], st.norms):
        x = activation("gelu", norm(conv2d(x, conv), nrm))
    return conv2d(x, st.convs[4])


def _finite(t: Tensor, where: str) -> None:
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite activations at {where}")


def model_forward(x: Tensor, m: Model, want_features: bool = False,
                  rng: Optional[np.random.Generator] = None, training: bool = False,
                  taps: Optional[dict] = None):
    """Logits (N, num_classes); with ``want_features`` also the four stage feature maps.

    Stage ``i``'s feature map is the last Clo-block stage output at that
    stage's resolution (H/4 ... H/32), i.e. the tensor fed to the stage's
    transition ConvFFN for stages 1-3 and the final output for stage 4.
    ``taps``, when given, collects branch intermediates keyed
    ``stage{i}.block{j}.{local.v_s|local.out|global.out}``.
    """
    x = conv_stem(x, m)
    _finite(x, "stem")
    feats = []
    for i, stage in enumerate(m.stages, start=1):
        for j, (blk, ffn) in enumerate(stage):
            block_taps = {} if taps is not None else None
            x = clo_block_forward(x, blk, rng, training, block_taps)
            _finite(x, f"stage{i}.block{j}")
            if taps is not None:
                taps.update({f"stage{i}.block{j}.{k}": v for k, v in block_taps.items()})
            if ffn.cross_stage:
                feats.append(x)
            x = convffn_forward(x, ffn, rng=rng, training=training)
            _finite(x, f"stage{i}.ffn{j}")
    feats.append(x)
    n, c, h, w = x.shape
    _record("pool", n * c * h * w)
    logits = fully_connected(mean(x, axis=(2, 3)), m.head)
    _finite(logits, "head")
    return (logits, feats) if want_features else logits
