import pytest

from mgrafa.config import RunConfig, load_config
from mgrafa.errors import ConfigurationError


def test_defaults():
    cfg = load_config()
    assert cfg.model.variant == "mg_rafa:2"
    assert cfg.dataset.num_ids == 32
    assert cfg.train.adam.lr == 3e-4


def test_overrides_and_types():
    cfg = load_config(text="[model]\nvariant = mg_rafa:4\nT = 4\n[backbone]\nblocks = 2\nwidths = 24\n[optimizer]\nlr = 0.001\n")
    assert cfg.model.variant == "mg_rafa:4" and cfg.model.T == 4
    assert cfg.model.backbone.widths == [24] and cfg.model.backbone.grid == (16, 8)
    assert cfg.train.adam.lr == 0.001


def test_tuple_field():
    cfg = load_config(text="[augment]\nerase_area = 0.1, 0.2\n")
    assert cfg.train.augment.erase_area == (0.1, 0.2)


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nvarient = sg_rafa\n",
        "[modle]\nvariant = sg_rafa\n",
        "[train]\nsteps = many\n",
        "[backbone]\nblocks = 2\n",
        "not an ini",
    ],
)
def test_rejects(text):
    with pytest.raises(ConfigurationError):
        load_config(text=text)


def test_round_trip(tmp_path):
    cfg = load_config(text="[loss]\nmargin = 0.5\nP = 4\n[dataset]\np_occ = 0.4\n")
    path = tmp_path / "c.ini"
    cfg.write(path)
    again = load_config(path)
    assert again == cfg
    assert again.to_text() == cfg.to_text()


def test_set_seed():
    cfg = RunConfig()
    cfg.set_seed(11)
    assert cfg.dataset.seed == cfg.train.seed == cfg.eval.seed == 11


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "nope.ini")
