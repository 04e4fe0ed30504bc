import json
from pathlib import Path

import numpy as np
import pytest

from dualtrain.errors import ConfigError
from dualtrain.zoo import FAMILIES, ArchConfig, build, conv_flops, dense_flops, flops_forward, param_shapes

FIXTURES = Path(__file__).parent / "fixtures"


def test_build_is_deterministic():
    cfg = ArchConfig("DepthResNet", 0)
    assert build(cfg, 7).store.snapshot() == build(cfg, 7).store.snapshot()
    assert build(cfg, 7).store.snapshot() != build(cfg, 8).store.snapshot()


def test_depth_resnet_level0_forward_shape(rng):
    m = build(ArchConfig("DepthResNet", 0), 0)
    assert m.config.stage_layers == (1, 1, 1) and m.config.stage_widths == (8, 16, 32)
    out = m.forward(rng.standard_normal((2, 3, 32, 32)), training=False)
    assert out.shape == (2, 10)


def test_width_mlp_levels_share_names():
    l0, l1 = ArchConfig("WidthMLP", 0), ArchConfig("WidthMLP", 1)
    assert l0.resolved().stage_widths == (32, 32) and l1.resolved().stage_widths == (48, 48)
    s0, s1 = param_shapes(l0), param_shapes(l1)
    assert set(s0) == set(s1)
    assert s0 != s1


def test_width_mlp_has_a_3d_class_embedding():
    shapes = param_shapes(ArchConfig("WidthMLP", 0, 3, (2, 1, 1)))
    assert shapes["head.class_embed"] == (1, 3, 32)


def test_defaults_per_family():
    assert ArchConfig("DepthResNet", 2).resolved().stage_layers == (3, 3, 3)
    wc = ArchConfig("WidthConvNet", 1).resolved()
    assert wc.stage_widths == (10, 20, 39)  # ceil(1.2 * [8, 16, 32])
    assert ArchConfig("WidthConvNet", 0).resolved().stage_widths == (8, 16, 32)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("level", [0, 1, 2])
def test_containment_of_consecutive_levels(family, level):
    small, big = param_shapes(ArchConfig(family, level)), param_shapes(ArchConfig(family, level + 1))
    missing = [n for n in small if n not in big]
    if family == "DepthResNet":
        # every block name of the shallower net exists in the deeper one
        assert not missing
    for name, shape in small.items():
        if name in big:
            assert len(shape) == len(big[name])
            assert all(a <= b for a, b in zip(shape, big[name]))


@pytest.mark.parametrize("family", FAMILIES)
def test_flops_strictly_increase_with_level(family):
    costs = [flops_forward(ArchConfig(family, L)) for L in range(4)]
    assert all(a < b for a, b in zip(costs, costs[1:]))


def test_eval_forward_is_pure(rng):
    m = build(ArchConfig("WidthConvNet", 0, 10, (3, 8, 8)), 0)
    x = rng.standard_normal((3, 3, 8, 8))
    before = m.store.checksum()
    a, b = m.forward(x).data, m.forward(x).data
    assert a.tobytes() == b.tobytes() and m.store.checksum() == before


def test_training_forward_updates_running_stats(rng):
    m = build(ArchConfig("DepthResNet", 0, 10, (3, 8, 8)), 0)
    before = m.store.checksum(list(m.store.buffers))
    m.forward(rng.standard_normal((4, 3, 8, 8)), training=True)
    assert m.store.checksum(list(m.store.buffers)) != before


def test_bad_geometry_is_config_error():
    with pytest.raises(ConfigError):
        build(ArchConfig("DepthResNet", 0, 10, (3, 6, 6)), 0)


def test_bad_input_shape_at_forward(rng):
    m = build(ArchConfig("WidthMLP", 0, 3, (2, 1, 1)), 0)
    with pytest.raises(ConfigError):
        m.forward(rng.standard_normal((2, 3, 1, 1)))


def test_init_scheme():
    m = build(ArchConfig("DepthResNet", 0), 0)
    s = m.store
    assert not s.value("head.bias").any() and not s.value("stem.bn.bias").any()
    assert np.all(s.value("stem.bn.weight") == 1.0)
    assert not s.value("stem.bn.running_mean").any()
    assert np.all(s.value("stem.bn.running_var") == 1.0)
    w = s.value("stem.conv.weight")
    assert np.abs(w).max() <= np.sqrt(6.0 / 27)


def test_predict_ties_go_to_lowest_class():
    m = build(ArchConfig("WidthMLP", 0, 3, (2, 1, 1)), 0)
    for name in ("head.weight", "head.bias", "head.class_embed"):
        m.store.value(name)[...] = 0.0
    assert np.array_equal(m.predict(np.ones((4, 2, 1, 1))), np.zeros(4))


def test_flops_dense_and_conv_examples():
    assert dense_flops(10, 5, bias=False) == 100
    assert conv_flops(3, 8, 3, 8, 8) == 27648


def test_flops_depth_resnet_level0_matches_hand_tally():
    tally = json.loads((FIXTURES / "resnet_l0_flops.json").read_text())
    assert sum(layer["flops"] for layer in tally["layers"]) == tally["total"]
    assert flops_forward(ArchConfig("DepthResNet", 0)) == tally["total"]
