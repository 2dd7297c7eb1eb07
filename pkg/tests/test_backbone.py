import numpy as np
import pytest

from eaten import numerics as nx
from eaten.backbone import (BackboneConfig, ConfigError, add_position_channels, extract_features, flatten_features,
                            init_backbone, unflatten_features)
from eaten.numerics import Tensor


def test_default_shape_contract():
    cfg = BackboneConfig([(8, 2), (16, 2), (32, 2)])
    params = init_backbone(cfg, np.random.default_rng(0))
    f = extract_features(np.random.default_rng(1).random((64, 64)), cfg, params)
    assert f.shape == (8, 8, 32)
    assert cfg.feature_shape(64, 64) == (8, 8, 32)
    fb = extract_features(np.zeros((3, 64, 64)), cfg, params)
    assert fb.shape == (3, 8, 8, 32)


def test_zero_image_zero_features():
    cfg = BackboneConfig([(4, 2), (8, 2)])
    f = extract_features(np.zeros((16, 16)), cfg, init_backbone(cfg, np.random.default_rng(0)))
    assert not f.data.any()


def test_indivisible_image_is_config_error():
    cfg = BackboneConfig([(4, 2), (8, 2)])
    with pytest.raises(ConfigError, match="stride 4"):
        extract_features(np.zeros((18, 16)), cfg, init_backbone(cfg, np.random.default_rng(0)))


def test_backbone_gradient_certified():
    cfg = BackboneConfig([(3, 2), (4, 2)])
    rng = np.random.default_rng(3)
    params = init_backbone(cfg, rng)
    for p in params.values():
        p.data[...] = rng.uniform(-1, 1, p.shape)
    img = rng.random((16, 16))
    w = Tensor(rng.standard_normal((4, 4, 4)))
    errs = nx.finite_diff_check(lambda: nx.sum_all(nx.mul(extract_features(img, cfg, params), w)),
                                list(params.values()))
    assert max(errs) < 1e-4


def test_dilated_stage_keeps_grid_and_is_certified():
    cfg = BackboneConfig([[3, 2], [4, 2], [4, 1, 2]])
    assert cfg.stages[2] == (4, 1, 2) and cfg.total_stride == 4
    rng = np.random.default_rng(4)
    params = init_backbone(cfg, rng)
    img = rng.random((16, 16))
    assert extract_features(img, cfg, params).shape == (4, 4, 4)
    w = Tensor(rng.standard_normal((4, 4, 4)))
    errs = nx.finite_diff_check(lambda: nx.sum_all(nx.mul(extract_features(img, cfg, params), w)),
                                list(params.values()))
    assert max(errs) < 1e-4


@pytest.mark.parametrize("stage", [(4,), (4, 0), (4, 1, 0, 1)])
def test_bad_stage_rejected(stage):
    with pytest.raises(ConfigError, match="stage"):
        BackboneConfig([(4, 2), stage])


def test_flatten_row_major():
    a, b, c, d = (np.array([v]) for v in (1.0, 2.0, 3.0, 4.0))
    f = Tensor(np.array([[a, b], [c, d]]))  # 2x2x1
    flat = flatten_features(f)
    np.testing.assert_array_equal(flat.data[:, 0], [1, 2, 3, 4])
    one = Tensor(np.arange(5.0).reshape(1, 1, 5))
    np.testing.assert_array_equal(flatten_features(one).data, [np.arange(5.0)])
    g = Tensor(np.random.default_rng(0).random((3, 4, 2)))
    fl = flatten_features(g)
    for k in range(12):
        np.testing.assert_array_equal(fl.data[k], g.data[k // 4, k % 4])
    np.testing.assert_array_equal(unflatten_features(fl, 3, 4).data, g.data)


def test_position_channels_are_one_hot():
    f = Tensor(np.zeros((2, 3, 4, 5)))
    p = add_position_channels(f)
    assert p.shape == (2, 3, 4, 5 + 3 + 4)
    for i in range(3):
        for j in range(4):
            rows, cols = p.data[0, i, j, 5:8], p.data[0, i, j, 8:]
            assert rows.argmax() == i and rows.sum() == 1
            assert cols.argmax() == j and cols.sum() == 1
