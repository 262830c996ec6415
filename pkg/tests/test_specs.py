import numpy as np
import pytest

from cloformer.errors import ConfigError
from cloformer.model import build_model
from cloformer.specs import (ABLATION_ROWS, PRESETS, XS, XXS, XXS_64, S, build_ablation, preset,
                             spec_from_text, spec_to_text)


def n_params(spec):
    return sum(t.size for t in build_model(spec, 0).parameters().values())


def test_xxs_constants():
    assert [s.blocks for s in XXS.stages] == [2, 2, 6, 2]
    assert [s.channels for s in XXS.stages] == [32, 64, 128, 256]
    assert [s.heads for s in XXS.stages] == [4, 4, 8, 16]
    assert [s.kernel for s in XXS.stages] == [3, 5, 7, 9]
    assert [s.split for s in XXS.stages] == [(24, 8), (32, 32), (64, 64), (64, 192)]
    assert [s.pool_stride for s in XXS.stages] == [8, 4, 2, 1]


@pytest.mark.parametrize("spec", [XXS, XS, S, XXS_64])
def test_every_split_is_a_head_partition(spec):
    for st in spec.stages:
        assert sum(st.split) == st.channels
        assert st.split[0] % st.head_dim == 0 and st.split[1] % st.head_dim == 0
        assert st.ffn_ratio == 4 and st.ffn_kernel == 5


def test_preset_lookup_is_case_insensitive():
    assert preset("XXS") is XXS
    with pytest.raises(ConfigError):
        preset("tiny")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_text_roundtrip(name):
    spec = PRESETS[name]
    assert spec_from_text(spec_to_text(spec)) == spec


@pytest.mark.parametrize("row", sorted(ABLATION_ROWS))
def test_ablation_rows_roundtrip_through_text(row):
    spec = build_ablation(XXS_64, {"row": row})
    assert spec_from_text(spec_to_text(spec)) == spec


def test_text_overrides_and_comments():
    spec = spec_from_text("# tweak\nnum_classes = 10  # fewer\nstage1.split = 8, 8\n", base=XXS_64)
    assert spec.num_classes == 10 and spec.stages[0].split == (8, 8)


@pytest.mark.parametrize("text,field", [
    ("stage1.split = 20, 8", "stage1.split"),
    ("stage2.heads = 3", "stage2.heads"),
    ("stage1.kernel = 4", "stage1.kernel"),
    ("ablation.local_kind = dense", "ablation.local_kind"),
    ("bogus = 1", "bogus"),
    ("stage1.channels", "line 1"),
])
def test_bad_config_names_the_field(text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        spec_from_text(text, base=XXS)


def test_full_knobs_reproduce_default():
    assert build_ablation(XXS, {}) == XXS
    assert build_ablation(XXS, {"row": "full"}).stages == XXS.stages


def test_only_global_removes_local_branch():
    spec = build_ablation(XXS, {"row": "only_global"})
    assert all(st.split == (0, st.channels) for st in spec.stages)
    names = build_model(spec, 0).parameters()
    assert not any(".local." in n for n in names)


def test_contradictory_knobs_rejected():
    with pytest.raises(ConfigError):
        build_ablation(XXS, {"branches": "global_only", "local_kind": "shared_only"})
    with pytest.raises(ConfigError):
        build_ablation(XXS, {"local_kind": "shared_only", "use_k": "false"})
    with pytest.raises(ConfigError):
        build_ablation(XXS, {"row": "nope"})
    with pytest.raises(ConfigError):
        build_ablation(XXS, {"warp": 3})


def test_nonlin_depth_step_adds_two_square_fcs_per_block():
    d0 = n_params(build_ablation(XXS, {"nonlin_depth": 0}))
    d1 = n_params(XXS)
    expect = sum(st.blocks * 2 * (st.split[0] ** 2 + st.split[0]) for st in XXS.stages)
    assert d1 - d0 == expect


def test_each_extra_pair_adds_one_fc_per_block():
    per_pair = sum(st.blocks * (st.split[0] ** 2 + st.split[0]) for st in XXS_64.stages)
    counts = [n_params(build_ablation(XXS_64, {"nonlin_depth": d})) for d in (1, 2, 3)]
    assert np.diff(counts).tolist() == [per_pair, per_pair]


def test_patch_embed_stem_is_smaller():
    assert n_params(build_ablation(XXS, {"row": "patch_embed"})) < n_params(XXS)
