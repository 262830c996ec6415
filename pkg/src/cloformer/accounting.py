"""Exact parameter and FLOP accounting.

FLOPs follow the multiply-accumulate convention: one MAC counts as one FLOP
for convolutions, FC layers and attention matmuls. Average pooling counts one
add per input element. Activations, norms, Hadamard products, softmax and bias
additions are not counted. The walk is analytic: it never runs the model.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

from .errors import DimensionError
from .layers import out_extent


@dataclass
class CostReport:
    rows: list = field(default_factory=list)  # (dotted module name, params, flops)
    input_size: Optional[tuple] = None

    @property
    def total_params(self) -> int:
        return sum(r[1] for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r[2] for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("name,params,flops\n")
        for name, p, f in self.rows:
            buf.write(f"{name},{p},{f}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        width = max((len(r[0]) for r in self.rows), default=4)
        lines = [f"{'name':<{width}}  {'params':>10}  {'flops':>14}"]
        lines += [f"{n:<{width}}  {p:>10,d}  {f:>14,d}" for n, p, f in self.rows]
        lines.append(f"{'TOTAL':<{width}}  {self.total_params:>10,d}  {self.total_flops:>14,d}")
        if self.input_size:
            lines.append(f"params {self.total_params / 1e6:.3f} M, "
                         f"FLOPs {self.total_flops / 1e9:.3f} G at {self.input_size[0]}x{self.input_size[1]}")
        return "\n".join(lines)


def _size(obj) -> int:
    return sum(t.size for _, t in obj.named("_"))


class _Walker:
    def __init__(self, with_flops: bool):
        self.rows = []
        self.with_flops = with_flops

    def add(self, name, params, flops):
        self.rows.append((name, int(params), int(flops) if self.with_flops else 0))

    def conv(self, name, p, h, w):
        ho, wo = out_extent(h, p.kernel, p.stride, p.pad), out_extent(w, p.kernel, p.stride, p.pad)
        macs = (p.c_in // p.groups) * p.c_out * p.kernel ** 2 * ho * wo
        self.add(name, _size(p), macs)
        return ho, wo

    def fc(self, name, p, hw):
        self.add(name, _size(p), p.c_in * p.c_out * hw)

    def norm(self, name, p):
        self.add(name, _size(p), 0)


def _walk(m, hw: Optional[tuple]) -> list:
    wk = _Walker(hw is not None)
    h, w = hw if hw is not None else (224, 224)
    for i, (conv, nrm) in enumerate(zip(m.stem.convs, m.stem.norms + [None] * 4), start=1):
        h, w = wk.conv(f"stem.conv{i}", conv, h, w)
        if nrm is not None:
            wk.norm(f"stem.norm{i}", nrm)
    for i, stage in enumerate(m.stages, start=1):
        for j, (blk, ffn) in enumerate(stage):
            pre = f"stage{i}.block{j}"
            n_tok = h * w
            wk.norm(f"{pre}.norm1", blk.norm1)
            wk.fc(f"{pre}.qkv", blk.qkv, n_tok)
            loc = blk.local
            if loc is not None:
                for name in ("dw_q", "dw_k", "dw_v"):
                    conv = getattr(loc, name)
                    if conv is not None:
                        wk.conv(f"{pre}.local.{name}", conv, h, w)
                for k, fc in enumerate(loc.fcs, start=1):
                    wk.fc(f"{pre}.local.fc{k}", fc, n_tok)
                if loc.kind.startswith("window"):
                    win = loc.kernel
                    n_win = -(-h // win) * -(-w // win)
                    wk.add(f"{pre}.local.window", 0, 2 * loc.channels * n_win * win ** 4)
            cg = blk.split[1]
            if cg:
                s = blk.pool_stride
                t = (h // s) * (w // s)
                pool = 2 * cg * n_tok if s > 1 else 0
                wk.add(f"{pre}.global", 0, 2 * n_tok * cg * t + pool)
            wk.fc(f"{pre}.fuse", blk.fuse, n_tok)

            pre = f"stage{i}.ffn{j}"
            wk.norm(f"{pre}.norm", ffn.norm)
            wk.fc(f"{pre}.fc_in", ffn.fc_in, n_tok)
            ho, wo = wk.conv(f"{pre}.dw", ffn.dw, h, w)
            wk.fc(f"{pre}.fc_out", ffn.fc_out, ho * wo)
            if ffn.cross_stage:
                wk.conv(f"{pre}.skip_dw", ffn.skip_dw, h, w)
                wk.fc(f"{pre}.skip_fc", ffn.skip_fc, ho * wo)
            h, w = ho, wo
    c = m.head.c_in
    wk.add("head.pool", 0, c * h * w)
    wk.fc("head", m.head, 1)
    return wk.rows


def count_params(m) -> CostReport:
    """Every learnable scalar, grouped by module; flops columns are zero."""
    return CostReport(_walk(m, None), None)


def count_flops(m, input_hw=(224, 224)) -> CostReport:
    """Analytic MAC count of one forward pass on a single image of ``input_hw``."""
    h, w = input_hw
    if h % 32 or w % 32:
        raise DimensionError(f"input extents must be divisible by 32, got {h}x{w}")
    return CostReport(_walk(m, (h, w)), (h, w))
