import numpy as np
import pytest

import oracles
from cloformer.attnconv import (LOCAL_KINDS, attnconv_forward, build_local_ablation,
                                gen_context_weights, init_attnconv, local_forward, window_attention)
from cloformer.checks import equivariance_error
from cloformer.errors import ArgumentError, DimensionError
from cloformer.tensor import Tensor, gradcheck, sum_

RNG = np.random.default_rng(7)


def T(a, grad=False):
    return Tensor(np.asarray(a, np.float64), requires_grad=grad)


def params(c=4, k=3, d=2, **kw):
    p = init_attnconv(c, k, d, np.random.default_rng(0), dtype=np.float64, **kw)
    rng = np.random.default_rng(1)
    for _, t in p.named("p"):
        t.data = rng.normal(0, 0.5, t.shape)
    return p


def test_context_weights_match_straight_line_formula():
    p = params()
    q, k = RNG.normal(size=(2, 4, 5, 6)), RNG.normal(size=(2, 4, 5, 6))
    want = oracles.context_weights(q, k, p.dw_q.weight.data, p.dw_q.bias.data,
                                   p.dw_k.weight.data, p.dw_k.bias.data,
                                   p.fcs[0].weight.data, p.fcs[0].bias.data,
                                   p.fcs[1].weight.data, p.fcs[1].bias.data, p.d)
    np.testing.assert_allclose(gen_context_weights(T(q), T(k), p).data, want, atol=1e-10)


def test_attnconv_is_gate_times_shared_aggregate():
    p = params()
    q, k, v = (RNG.normal(size=(1, 4, 6, 6)) for _ in range(3))
    gate = gen_context_weights(T(q), T(k), p).data
    v_s = oracles.dwconv2d(v, p.dw_v.weight.data, p.dw_v.bias.data)
    taps = {}
    out = attnconv_forward(T(q), T(k), T(v), p, taps)
    np.testing.assert_allclose(out.data, gate * v_s, atol=1e-10)
    np.testing.assert_allclose(taps["v_s"].data, v_s, atol=1e-10)


def test_context_weights_strictly_bounded_even_when_saturated():
    p = params()
    q = RNG.normal(size=(2, 4, 6, 6)) * 1e3
    y = gen_context_weights(T(q), T(q), p).data
    assert np.abs(y).max() < 1


def test_without_k_only_q_drives_the_gate():
    p = params(use_k=False)
    assert p.dw_k is None and p.streams == ("q", "v")
    q = RNG.normal(size=(1, 4, 5, 5))
    a = gen_context_weights(T(q), None, p).data
    b = gen_context_weights(T(q), T(RNG.normal(size=q.shape)), p).data
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("fcs,depth", [(0, 0), (2, 1), (3, 2), (4, 3)])
def test_gate_depth(fcs, depth):
    p = params(gate_fcs=fcs)
    assert len(p.fcs) == fcs and p.nonlin_depth == depth
    q = RNG.normal(size=(1, 4, 4, 4))
    assert gen_context_weights(T(q), T(q), p).shape == q.shape


def test_single_gate_fc_is_rejected():
    with pytest.raises(ArgumentError):
        params(gate_fcs=1)


def test_shape_mismatch_raises():
    p = params()
    with pytest.raises(DimensionError):
        gen_context_weights(T(np.zeros((1, 4, 4, 4))), T(np.zeros((1, 4, 4, 5))), p)
    with pytest.raises(DimensionError):
        gen_context_weights(T(np.zeros((1, 3, 4, 4))), T(np.zeros((1, 3, 4, 4))), p)


@pytest.mark.parametrize("kind", LOCAL_KINDS)
def test_every_local_kind_runs_and_preserves_shape(kind):
    p = params(kind=kind)
    q, k, v = (T(RNG.normal(size=(2, 4, 7, 5))) for _ in range(3))
    assert build_local_ablation(kind)(q, k, v, p).shape == (2, 4, 7, 5)
    assert local_forward(q, k, v, p).shape == (2, 4, 7, 5)


def test_unknown_kind_rejected():
    with pytest.raises(ArgumentError):
        build_local_ablation("deformable")


def test_shared_only_is_plain_depthwise_conv():
    p = params(kind="shared_only")
    v = RNG.normal(size=(1, 4, 5, 5))
    want = oracles.dwconv2d(v, p.dw_v.weight.data, p.dw_v.bias.data)
    np.testing.assert_allclose(local_forward(None, None, T(v), p).data, want, atol=1e-10)


@pytest.mark.parametrize("h,w", [(6, 6), (7, 5)])
def test_window_attention_matches_per_token_loops(h, w):
    q, k, v = (RNG.normal(size=(1, 4, h, w)) for _ in range(3))
    got = window_attention(T(q), T(k), T(v), 3, 2).data
    np.testing.assert_allclose(got, oracles.window_attention(q, k, v, 3, 2), atol=1e-10)


def test_window_attention_gradients_with_padding():
    q, k, v = (T(RNG.normal(size=(1, 4, 5, 4)), grad=True) for _ in range(3))
    w = RNG.normal(size=(1, 4, 5, 4))
    assert max(gradcheck(lambda: sum_(window_attention(q, k, v, 3, 2) * Tensor(w)), [q, k, v])) < 1e-7


def test_attnconv_gradients():
    p = params()
    q, k, v = (T(RNG.normal(size=(2, 4, 4, 4)), grad=True) for _ in range(3))
    w = RNG.normal(size=(2, 4, 4, 4))
    leaves = [q, k, v] + [t for _, t in p.named("p")]
    assert max(gradcheck(lambda: sum_(attnconv_forward(q, k, v, p) * Tensor(w)), leaves)) < 1e-6


def test_circular_padding_gives_shift_equivariance():
    assert equivariance_error("circular") < 1e-10


def test_zero_padding_breaks_shift_equivariance():
    assert equivariance_error("zero") > 1e-3
