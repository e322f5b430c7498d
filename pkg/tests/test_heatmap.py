import numpy as np
import pytest

from mgrafa.data import OCCLUDER, PERSON
from mgrafa.errors import FormatError
from mgrafa.heatmap import (
    attention_maps,
    export_heatmaps,
    node_labels,
    read_pgm,
    region_masses,
    to_gray,
    upsample_nearest,
    write_pgm,
)
from mgrafa.feature import BackboneConfig
from mgrafa.model import ModelConfig, ReidModel


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes()[:11] == b"P5\n7 5\n255\n"
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "a.pgm", np.zeros((2, 2)))
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "b.pgm")


def test_upsample_nearest():
    a = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(upsample_nearest(a, 4, 2), [[1, 2], [1, 2], [3, 4], [3, 4]])
    with pytest.raises(ValueError):
        upsample_nearest(a, 3, 2)


def test_to_gray():
    np.testing.assert_array_equal(to_gray(np.array([0.0, 0.5, 1.0]), 1.0), [0, 128, 255])
    assert not to_gray(np.zeros(3), 0.0).any()


def test_node_labels_majority():
    mask = np.zeros((1, 4, 4), dtype=np.uint8)
    mask[0, :2, :2] = PERSON
    mask[0, 2:, 2:] = OCCLUDER
    mask[0, 0, 2:] = PERSON  # 2 of 4 pixels, tie resolves to the lower label
    np.testing.assert_array_equal(node_labels(mask, 2, 2)[0], [[PERSON, 0], [0, OCCLUDER]])


def test_region_masses():
    a = np.array([[[0.1, 0.2], [0.3, 0.4]]])
    mask = np.array([[[1, 1], [2, 0]]], dtype=np.uint8)
    assert region_masses(a, mask) == (0.3, pytest.approx(0.15))
    assert region_masses(a, np.ones_like(mask)) is None


@pytest.fixture(scope="module")
def maps():
    cfg = ModelConfig(variant="mg_rafa:4", T=4, s=2, s_r=2, backbone=BackboneConfig(blocks=2, widths=[8], out_channels=16))
    model = ReidModel(cfg, num_ids=3, seed=0)
    frames = np.random.default_rng(1).random((4, 64, 32, 3)).astype(np.float32)
    return attention_maps(model, frames)


class TestModelMaps:
    def test_shapes(self, maps):
        assert [m.shape for m in maps] == [(4, 16, 8), (4, 8, 4), (4, 4, 2), (4, 2, 1)]

    def test_mass_sums_to_one(self, maps):
        for m in maps:
            assert abs(m.sum() - 1) < 1e-5

    def test_export(self, maps, tmp_path):
        paths = export_heatmaps(maps, tmp_path, 64, 32)
        assert len(paths) == 16
        imgs = [read_pgm(p) for p in paths]
        assert all(i.shape == (64, 32) for i in imgs)
        for m in range(4):
            assert max(read_pgm(tmp_path / f"attn_t{t}_g{m}.pgm").max() for t in range(4)) == 255
