import numpy as np
import pytest

from mgrafa.errors import ConfigurationError
from mgrafa.feature import FeatureNodeSet
from mgrafa.refset import Strategy, build_reference_set
from mgrafa.tensor import Tensor


def random_set(T=8, H=16, W=8, C=3, seed=0):
    return FeatureNodeSet(Tensor(np.random.default_rng(seed).standard_normal((T, H, W, C))))


def test_temporal_mean_constant_frames():
    maps = np.stack([np.zeros((4, 2, 3)), np.full((4, 2, 3), 2.0)])
    ref = build_reference_set(FeatureNodeSet(Tensor(maps)), Strategy.parse("temporal_mean"))
    np.testing.assert_array_equal(ref.nodes.data, np.ones((8, 3)))
    assert ref.extents == (4, 2, 1)


@pytest.mark.parametrize(
    "text, nodes",
    [
        ("all", 1024),
        ("temporal_mean", 128),
        ("spatial_pool:8x1", 64),
        ("spatial_pool:8x2", 128),
        ("spatial_pool:4x4", 128),
        ("spatial_pool:8x4", 256),
        ("temporal_pool:2", 256),
        ("temporal_pool:4", 512),
    ],
)
def test_node_counts_follow_reference_table(text, nodes):
    strategy = Strategy.parse(text)
    assert strategy.num_nodes(16, 8, 8) == nodes
    assert build_reference_set(random_set(), strategy).D == nodes


def test_temporal_mean_frame_permutation():
    fset = random_set(seed=1)
    perm = np.random.default_rng(2).permutation(8)
    a = build_reference_set(fset).nodes.data
    b = build_reference_set(FeatureNodeSet(Tensor(fset.maps.data[perm]))).nodes.data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_all_nodes_then_average_equals_temporal_mean():
    fset = random_set(T=4, H=4, W=2, seed=3)
    allref = build_reference_set(fset, Strategy.parse("all")).nodes.data.reshape(4, 8, 3)
    np.testing.assert_allclose(allref.mean(axis=0), build_reference_set(fset).nodes.data, atol=1e-6)


def test_spatial_and_temporal_pool_values():
    fset = random_set(T=4, H=4, W=2, seed=4)
    maps = fset.maps.data
    sp = build_reference_set(fset, Strategy.parse("spatial_pool:2x1")).nodes.data
    expect = maps.reshape(4, 2, 2, 1, 2, 3).mean(axis=(2, 4)).reshape(-1, 3)
    np.testing.assert_allclose(sp, expect, atol=1e-12)
    tp = build_reference_set(fset, Strategy.parse("temporal_pool:2")).nodes.data
    expect = np.stack([maps[0:2].mean(0), maps[2:4].mean(0)]).reshape(-1, 3)
    np.testing.assert_allclose(tp, expect, atol=1e-12)


def test_batched_reference():
    maps = np.random.default_rng(5).standard_normal((3, 2, 4, 2, 5))
    ref = build_reference_set(FeatureNodeSet(Tensor(maps)))
    assert ref.nodes.shape == (3, 8, 5)
    np.testing.assert_allclose(ref.nodes.data[1], maps[1].mean(0).reshape(8, 5), atol=1e-12)


@pytest.mark.parametrize("text", ["spatial_pool:3x1", "temporal_pool:3"])
def test_non_divisible(text):
    with pytest.raises(ConfigurationError):
        build_reference_set(random_set(), Strategy.parse(text))


@pytest.mark.parametrize("text", ["bogus", "spatial_pool:8", "temporal_pool:x", "all:3"])
def test_bad_strategy_text(text):
    with pytest.raises(ConfigurationError):
        Strategy.parse(text)
