"""Self-checks runnable from the command line: gradient agreement and shift equivariance."""

from __future__ import annotations

import numpy as np

from .attnconv import attnconv_forward, init_attnconv, window_attention
from .block import (clo_block_forward, convffn_forward, global_branch_forward, init_clo_block,
                    init_convffn)
from .errors import ArgumentError
from .layers import (Conv2dParams, LinearParams, activation, avg_pool2d, conv2d, dwconv2d,
                     fully_connected, layer_norm_channels, softmax_tokens)
from .loss import softmax_cross_entropy
from .specs import AblationConfig
from .tensor import Tensor, gradcheck, no_grad


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, shape), dtype=np.float64, requires_grad=True)


def _weighted(y: Tensor, rng) -> callable:
    """A random linear functional of ``y``, so every output element matters."""
    w = Tensor(rng.normal(size=y.shape), dtype=np.float64)
    return lambda out: (out * w).sum()


def _case(build):
    def run(rng):
        f, leaves = build(rng)
        probe = _weighted(f(), rng)
        return max(gradcheck(lambda: probe(f()), leaves))
    return run


def _dw_case(rng):
    x, w, b = _t(rng, 2, 3, 7, 6), _t(rng, 3, 1, 3, 3), _t(rng, 3)
    p = Conv2dParams(w, b, stride=2, groups=3)
    return lambda: dwconv2d(x, p), [x, w, b]


def _conv_case(rng):
    x, w, b = _t(rng, 2, 3, 6, 6), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    p = Conv2dParams(w, b, stride=2)
    return lambda: conv2d(x, p), [x, w, b]


def _fc_case(rng):
    x, w, b = _t(rng, 2, 4, 3, 3), _t(rng, 5, 4), _t(rng, 5)
    p = LinearParams(w, b)
    return lambda: fully_connected(x, p), [x, w, b]


def _pool_case(rng):
    x = _t(rng, 2, 3, 4, 6)
    return lambda: avg_pool2d(x, 2), [x]


def _softmax_case(rng):
    x = _t(rng, 2, 3, 5)
    return lambda: softmax_tokens(x), [x]


def _act_case(kind):
    def build(rng):
        x = _t(rng, 2, 3, 4, 4)
        return lambda: activation(kind, x), [x]
    return build


def _norm_case(rng):
    x, g, o = _t(rng, 2, 4, 3, 3), _t(rng, 4), _t(rng, 4)
    return lambda: layer_norm_channels(x, g, o), [x, g, o]


def _attnconv_case(rng):
    p = init_attnconv(4, 3, 2, rng, dtype=np.float64)
    for t in (p.dw_q.weight, p.dw_k.weight, p.dw_v.weight):
        t.data = rng.normal(0, 0.5, t.shape)
    for fc in p.fcs:
        fc.weight.data = rng.normal(0, 0.5, fc.weight.shape)
    q, k, v = (_t(rng, 2, 4, 5, 5) for _ in range(3))
    leaves = [q, k, v, p.dw_q.weight, p.dw_k.weight, p.dw_v.weight, p.fcs[0].weight, p.fcs[1].weight]
    return lambda: attnconv_forward(q, k, v, p), leaves


def _window_case(rng):
    q, k, v = (_t(rng, 2, 4, 5, 5) for _ in range(3))
    return lambda: window_attention(q, k, v, 3, 2), [q, k, v]


def _global_case(rng):
    q, k, v = (_t(rng, 2, 4, 4, 4) for _ in range(3))
    return lambda: global_branch_forward(q, k, v, 2, 2), [q, k, v]


def _randomize(params: dict, rng) -> list:
    leaves = []
    for t in params:
        t.data = rng.normal(0, 0.3, t.shape)
        leaves.append(t)
    return leaves


def _block_case(rng):
    p = init_clo_block(8, 2, (4, 4), 2, 3, rng, AblationConfig(), 0.0, np.float64)
    leaves = _randomize([t for _, t in p.named("b")], rng)
    x = _t(rng, 2, 8, 4, 4)
    return lambda: clo_block_forward(x, p), [x] + leaves


def _ffn_case(rng):
    p = init_convffn(4, rng, ratio=2, kernel=3, out_channels=6, dtype=np.float64)
    leaves = _randomize([t for _, t in p.named("f")], rng)
    x = _t(rng, 2, 4, 4, 4)
    return lambda: convffn_forward(x, p), [x] + leaves


def _xent_case(rng):
    logits = _t(rng, 4, 5)
    labels = rng.integers(0, 5, 4)
    return lambda: softmax_cross_entropy(logits, labels).reshape(1), [logits]


GRAD_CASES = {
    "dwconv": _dw_case, "conv": _conv_case, "fc": _fc_case, "pool": _pool_case,
    "softmax": _softmax_case, "gelu": _act_case("gelu"), "swish": _act_case("swish"),
    "tanh": _act_case("tanh"), "relu": _act_case("relu"), "sigmoid": _act_case("sigmoid"),
    "layernorm": _norm_case, "attnconv": _attnconv_case, "window_attn": _window_case,
    "global": _global_case, "clo_block": _block_case, "convffn": _ffn_case, "xent": _xent_case,
}


def grad_errors(modules=None, seed: int = 0) -> dict:
    """Largest relative error between analytic and central-difference gradients, per module."""
    names = list(GRAD_CASES) if not modules else list(modules)
    out = {}
    for name in names:
        if name not in GRAD_CASES:
            raise ArgumentError(f"unknown module {name!r}; expected one of {sorted(GRAD_CASES)}")
        out[name] = _case(GRAD_CASES[name])(np.random.default_rng(seed))
    return out


def equivariance_error(padding: str = "circular", seed: int = 0, size=(1, 8, 12, 12),
                       shifts=range(3)) -> float:
    """Max |f(shift(x)) - shift(f(x))| of the AttnConv operator over 2-D shifts."""
    rng = np.random.default_rng(seed)
    p = init_attnconv(size[1], 3, 2, rng, padding=padding, dtype=np.float64)
    q, k, v = (rng.normal(size=size) for _ in range(3))

    def f(a, b, c):
        with no_grad():
            return attnconv_forward(Tensor(a), Tensor(b), Tensor(c), p).data

    base = f(q, k, v)
    worst = 0.0
    for dy in shifts:
        for dx in shifts:
            roll = lambda a: np.roll(a, (dy, dx), axis=(2, 3))
            worst = max(worst, float(np.abs(f(roll(q), roll(k), roll(v)) - roll(base)).max()))
    return worst
