"""Declarative variant descriptions, named presets, ablation knobs and the text config grammar.

Config text is one ``key = value`` per line; ``#`` starts a comment::

    name = XXS
    num_classes = 1000
    stage1.channels = 32
    stage1.split = 24, 8
    ablation.local_kind = full
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .attnconv import LOCAL_KINDS
from .errors import ConfigError
from .layers import ACTIVATIONS

STEM_KINDS = ("conv", "patch_embed")
BRANCHES = ("both", "global_only", "local_only")


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    channels: int
    heads: int
    split: tuple  # (local, global) channels
    kernel: int
    pool_stride: int
    ffn_ratio: int = 4
    ffn_kernel: int = 5

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def local_channels(self) -> int:
        return self.split[0]

    @property
    def global_channels(self) -> int:
        return self.split[1]


@dataclass(frozen=True)
class AblationConfig:
    """Knobs covering the ablation rows; the defaults are the full model."""

    branches: str = "both"
    local_kind: str = "full"
    use_k: bool = True
    qk_conv: bool = True
    nonlin_depth: int = 1
    inner_act: Optional[str] = "swish"
    outer_act: Optional[str] = "tanh"
    swish_beta: float = 1.0
    stem: str = "conv"

    @property
    def gate_fcs(self) -> int:
        return 0 if self.nonlin_depth == 0 else self.nonlin_depth + 1


@dataclass(frozen=True)
class VariantSpec:
    name: str
    stages: tuple
    stem_channels: int
    num_classes: int = 1000
    drop_path_max: float = 0.0
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "VariantSpec":
        if len(self.stages) != 4:
            raise ConfigError(f"stages: expected 4, got {len(self.stages)}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes: must be >= 1, got {self.num_classes}")
        if not 0 <= self.drop_path_max < 1:
            raise ConfigError(f"drop_path_max: must be in [0, 1), got {self.drop_path_max}")
        if self.stem_channels != self.stages[0].channels:
            raise ConfigError(f"stem_channels: {self.stem_channels} must equal stage1.channels "
                              f"{self.stages[0].channels}")
        ab = self.ablation
        for i, st in enumerate(self.stages, start=1):
            key = f"stage{i}"
            if st.blocks < 1:
                raise ConfigError(f"{key}.blocks: must be >= 1, got {st.blocks}")
            if st.heads < 1 or st.channels % st.heads:
                raise ConfigError(f"{key}.heads: {st.heads} does not divide channels {st.channels}")
            if len(st.split) != 2 or sum(st.split) != st.channels:
                raise ConfigError(f"{key}.split: {list(st.split)} does not sum to channels {st.channels}")
            cl, cg = st.split
            if cl < 0 or cg < 0 or cl % st.head_dim or cg % st.head_dim:
                raise ConfigError(f"{key}.split: {list(st.split)} is not a partition into heads of "
                                  f"{st.head_dim} channels")
            if cl == 0 and ab.branches != "global_only":
                raise ConfigError(f"{key}.split: empty local branch requires ablation.branches = global_only")
            if cg == 0 and ab.branches != "local_only":
                raise ConfigError(f"{key}.split: empty global branch requires ablation.branches = local_only")
            if ab.branches == "global_only" and cl:
                raise ConfigError(f"{key}.split: global_only needs local channels 0, got {cl}")
            if ab.branches == "local_only" and cg:
                raise ConfigError(f"{key}.split: local_only needs global channels 0, got {cg}")
            if st.kernel < 1 or st.kernel % 2 == 0:
                raise ConfigError(f"{key}.kernel: must be odd, got {st.kernel}")
            if st.ffn_kernel < 1 or st.ffn_kernel % 2 == 0:
                raise ConfigError(f"{key}.ffn_kernel: must be odd, got {st.ffn_kernel}")
            if st.pool_stride < 1:
                raise ConfigError(f"{key}.pool_stride: must be >= 1, got {st.pool_stride}")
            if st.ffn_ratio < 1:
                raise ConfigError(f"{key}.ffn_ratio: must be >= 1, got {st.ffn_ratio}")
        if ab.branches not in BRANCHES:
            raise ConfigError(f"ablation.branches: {ab.branches!r} not in {BRANCHES}")
        if ab.local_kind not in LOCAL_KINDS:
            raise ConfigError(f"ablation.local_kind: {ab.local_kind!r} not in {LOCAL_KINDS}")
        if ab.stem not in STEM_KINDS:
            raise ConfigError(f"ablation.stem: {ab.stem!r} not in {STEM_KINDS}")
        if ab.nonlin_depth < 0:
            raise ConfigError(f"ablation.nonlin_depth: must be >= 0, got {ab.nonlin_depth}")
        for name in ("inner_act", "outer_act"):
            act = getattr(ab, name)
            if act is not None and act not in ACTIVATIONS:
                raise ConfigError(f"ablation.{name}: {act!r} not in {ACTIVATIONS}")
        return self

    @property
    def depth(self) -> int:
        return sum(st.blocks for st in self.stages)


def _stages(blocks, channels, heads, splits, kernels=(3, 5, 7, 9), strides=(8, 4, 2, 1)):
    return tuple(StageSpec(b, c, h, tuple(sp), k, s)
                 for b, c, h, sp, k, s in zip(blocks, channels, heads, splits, kernels, strides))


# Architecture tables: blocks, embed dims, heads, [local, global] splits,
# AttnConv kernels 3/5/7/9, pooling strides 8/4/2/1, ConvFFN ratio 4 and kernel 5.
XXS = VariantSpec("XXS", _stages([2, 2, 6, 2], [32, 64, 128, 256], [4, 4, 8, 16],
                                 [[24, 8], [32, 32], [64, 64], [64, 192]]), 32, drop_path_max=0.0)
XS = VariantSpec("XS", _stages([2, 2, 6, 2], [48, 96, 160, 352], [3, 6, 10, 22],
                               [[32, 16], [48, 48], [80, 80], [112, 240]]), 48, drop_path_max=0.06)
S = VariantSpec("S", _stages([2, 2, 6, 2], [64, 128, 224, 448], [4, 8, 14, 28],
                             [[48, 16], [64, 64], [112, 112], [112, 336]]), 64, drop_path_max=0.06)
# Desk-scale topology twin of XXS: channels and splits halved, 8 classes.
XXS_64 = VariantSpec("XXS-64", _stages([2, 2, 6, 2], [16, 32, 64, 128], [4, 4, 8, 16],
                                       [[12, 4], [16, 16], [32, 32], [32, 96]]), 16, num_classes=8)

PRESETS = {"xxs": XXS, "xs": XS, "s": S, "xxs-64": XXS_64}


def preset(name: str) -> VariantSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(PRESETS)}") from None


# -- ablation rows -------------------------------------------------------------------

# Named rows map to knob sets applied on top of the base variant.
ABLATION_ROWS = {
    # ConvFFN / branch study, cumulative from the global-only model
    "only_global_k3": {"branches": "global_only", "ffn_kernel": 3},
    "only_global": {"branches": "global_only"},
    "shared": {"local_kind": "shared_only"},
    "qk": {"qk_conv": False, "nonlin_depth": 0, "outer_act": None},
    "tanh": {"qk_conv": False, "nonlin_depth": 0},
    "dwconv": {"nonlin_depth": 0},
    "fc": {"inner_act": None},
    "full": {},
    "only_local": {"branches": "local_only"},
    "global_shared": {"local_kind": "shared_only"},
    "global_context": {"local_kind": "context_only"},
    # five local-perception methods
    "a": {"local_kind": "shared_only"},
    "b": {"local_kind": "window_attn"},
    "c": {"local_kind": "context_only"},
    "d": {"local_kind": "window_attn_plus_shared"},
    "e": {},
    # K removal
    "only_q": {"use_k": False},
    # nonlinearity depth: Tanh only, then 1..3 (FC, Swish) hops
    "nonlin0": {"nonlin_depth": 0},
    "nonlin1": {"nonlin_depth": 1},
    "nonlin2": {"nonlin_depth": 2},
    "nonlin3": {"nonlin_depth": 3},
    # activation pairings (inner + outer)
    "gelu_tanh": {"inner_act": "gelu"},
    "silu_tanh": {"inner_act": "silu"},
    "relu_tanh": {"inner_act": "relu"},
    "swish_gelu": {"outer_act": "gelu"},
    "swish_sigmoid": {"outer_act": "sigmoid"},
    "swish_tanh": {},
    # early conv
    "patch_embed": {"stem": "patch_embed"},
    "conv_stem": {"stem": "conv"},
}

_GATE_KNOBS = ("use_k", "qk_conv", "nonlin_depth", "inner_act", "outer_act", "swish_beta")


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_act(v) -> Optional[str]:
    if v is None:
        return None
    s = str(v).strip().lower()
    return None if s in ("none", "identity", "") else s


def build_ablation(base: VariantSpec, knobs: dict) -> VariantSpec:
    """Apply ablation knobs (or a named ``row``) to ``base`` and validate the result."""
    knobs = dict(knobs)
    row = knobs.pop("row", None)
    if row is not None:
        if row not in ABLATION_ROWS:
            raise ConfigError(f"row: unknown ablation row {row!r}; expected one of {sorted(ABLATION_ROWS)}")
        knobs = {**ABLATION_ROWS[row], **knobs}

    ab = base.ablation
    stages = base.stages
    updates = {}
    for key, value in knobs.items():
        if key == "branches":
            updates[key] = str(value)
        elif key in ("local_kind", "stem"):
            updates[key] = str(value)
        elif key in ("use_k", "qk_conv"):
            updates[key] = _parse_bool(value)
        elif key == "nonlin_depth":
            updates[key] = int(value)
        elif key in ("inner_act", "outer_act"):
            updates[key] = _parse_act(value)
        elif key == "swish_beta":
            updates[key] = float(value)
        elif key == "ffn_kernel":
            stages = tuple(replace(st, ffn_kernel=int(value)) for st in stages)
        elif key in ("drop_path", "drop_path_max"):
            base = replace(base, drop_path_max=float(value))
        elif key == "num_classes":
            base = replace(base, num_classes=int(value))
        else:
            raise ConfigError(f"{key}: unknown ablation knob")

    branches = updates.get("branches", ab.branches)
    if branches not in BRANCHES:
        raise ConfigError(f"branches: {branches!r} not in {BRANCHES}")
    kind = updates.get("local_kind", ab.local_kind)
    if branches == "global_only":
        touched = [k for k in updates if k == "local_kind" or k in _GATE_KNOBS]
        if touched:
            raise ConfigError(f"{touched[0]}: contradicts branches = global_only (no local branch)")
    elif kind not in ("full", "context_only"):
        touched = [k for k in updates if k in _GATE_KNOBS]
        if touched:
            raise ConfigError(f"{touched[0]}: local kind {kind!r} has no context-aware gate")

    if branches != ab.branches:
        if branches == "global_only":
            stages = tuple(replace(st, split=(0, st.channels)) for st in stages)
        elif branches == "local_only":
            stages = tuple(replace(st, split=(st.channels, 0)) for st in stages)
        else:
            raise ConfigError("branches: restoring both branches needs an explicit split in the config")
    name = base.name if row is None else f"{base.name}+{row}"
    out = replace(base, name=name, stages=stages, ablation=replace(ab, **updates))
    return out.validate()


# -- text config -------------------------------------------------------------------------

_STAGE_KEYS = {f.name for f in fields(StageSpec)}
_ABLATION_KEYS = {f.name for f in fields(AblationConfig)}


def spec_to_text(spec: VariantSpec) -> str:
    lines = [f"name = {spec.name}", f"num_classes = {spec.num_classes}",
             f"stem_channels = {spec.stem_channels}", f"drop_path_max = {spec.drop_path_max!r}"]
    for i, st in enumerate(spec.stages, start=1):
        for f in fields(StageSpec):
            v = getattr(st, f.name)
            v = ", ".join(str(x) for x in v) if isinstance(v, tuple) else v
            lines.append(f"stage{i}.{f.name} = {v}")
    for f in fields(AblationConfig):
        v = getattr(spec.ablation, f.name)
        lines.append(f"ablation.{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str, base: Optional[VariantSpec] = None) -> VariantSpec:
    """Parse config text. Keys absent from ``text`` are taken from ``base``."""
    top = {}
    stage_kv = [dict() for _ in range(4)]
    abl = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("stage") and "." in key:
            head, sub = key.split(".", 1)
            try:
                idx = int(head[5:]) - 1
            except ValueError:
                raise ConfigError(f"line {lineno}: bad stage key {key!r}") from None
            if not 0 <= idx < 4 or sub not in _STAGE_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            stage_kv[idx][sub] = value
        elif key.startswith("ablation."):
            sub = key.split(".", 1)[1]
            if sub not in _ABLATION_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            abl[sub] = value
        elif key in ("name", "num_classes", "stem_channels", "drop_path_max"):
            top[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    stages = []
    for i in range(4):
        kv = stage_kv[i]
        prev = base.stages[i] if base is not None else None
        vals = {}
        for f in fields(StageSpec):
            if f.name in kv:
                raw = kv[f.name]
                try:
                    vals[f.name] = (tuple(int(x) for x in raw.split(",")) if f.name == "split"
                                    else int(raw))
                except ValueError:
                    raise ConfigError(f"stage{i + 1}.{f.name}: not an integer: {raw!r}") from None
            elif prev is not None:
                vals[f.name] = getattr(prev, f.name)
            elif f.name in ("ffn_ratio", "ffn_kernel"):
                continue
            else:
                raise ConfigError(f"stage{i + 1}.{f.name}: missing")
        stages.append(StageSpec(**vals))

    ab = base.ablation if base is not None else AblationConfig()
    ab_updates = {}
    for k, v in abl.items():
        if k in ("use_k", "qk_conv"):
            ab_updates[k] = _parse_bool(v)
        elif k == "nonlin_depth":
            ab_updates[k] = int(v)
        elif k == "swish_beta":
            ab_updates[k] = float(v)
        elif k in ("inner_act", "outer_act"):
            ab_updates[k] = _parse_act(v)
        else:
            ab_updates[k] = v
    try:
        name = top.get("name", base.name if base else "custom")
        num_classes = int(top["num_classes"]) if "num_classes" in top else (base.num_classes if base else 1000)
        stem = int(top["stem_channels"]) if "stem_channels" in top else stages[0].channels
        dp = float(top["drop_path_max"]) if "drop_path_max" in top else (base.drop_path_max if base else 0.0)
    except ValueError as exc:
        raise ConfigError(f"bad top-level value: {exc}") from None
    return VariantSpec(name, tuple(stages), stem, num_classes, dp, replace(ab, **ab_updates)).validate()
