import time

import numpy as np
import pytest

from mgrafa.errors import ConfigurationError
from mgrafa.flops import (
    COMPONENTS,
    FULL_SCALE,
    CostConfig,
    count_attention,
    instrumented_count,
    preset_csv,
    preset_rows,
)
from mgrafa import tensor as tt


def full_scale(variant, strategy="temporal_mean"):
    return count_attention(CostConfig(variant=variant, strategy=strategy, **FULL_SCALE))


def test_single_linear_map_macs():
    x = tt.Tensor(np.ones((3, 4)))
    w = tt.Tensor(np.ones((2, 4)))
    with tt.count_macs() as counter:
        tt.linear_map(x, w)
    assert counter.total == 24


def test_sg_closed_form_by_hand():
    # K=8, D=4, C=8, C/s=2, D/s_r=2
    rep = count_attention(CostConfig(H=2, W=2, T=2, C=8, variant="sg_rafa", s=4, s_r=2))
    assert rep.granularities == [
        dict(mu=128, nu=64, relation=64, phi=128, psi=64, theta=256, aggregation=64)
    ]
    assert rep.total == sum(rep.components().values())


def test_relation_width_floor():
    # D=2 with s_r=4 keeps one relation channel
    rep = count_attention(CostConfig(H=2, W=1, T=2, C=8, variant="sg_rafa", s=4, s_r=4))
    assert rep.component("psi") == 4 * 2 * 1
    assert rep.component("theta") == 4 * (2 + 1) * 8


def test_no_relation_variant_drops_relation_branch():
    rep = count_attention(CostConfig(H=4, W=2, T=2, C=16, variant="mg_afa:2", s=4, s_r=4))
    for name in ("mu", "nu", "relation", "psi"):
        assert rep.component(name) == 0
    assert rep.granularities[1]["theta"] == 4 * 2 * 8  # K=2*1*2, C_g/s=2, C_g=8


def test_baseline_is_free():
    assert full_scale("baseline").total == 0


def test_invalid_variant():
    with pytest.raises(ConfigurationError):
        count_attention(CostConfig(H=4, W=2, T=2, C=16, variant="mg_rafa"))
    with pytest.raises(ConfigurationError):
        count_attention(CostConfig(H=4, W=2, T=2, C=16, variant="mg_rafa:3"))


def test_full_scale_ratio():
    t = time.perf_counter()
    ratio = full_scale("mg_rafa:4").total / full_scale("sg_rafa").total
    assert 0.087 <= ratio <= 0.097
    assert time.perf_counter() - t < 1.0


def test_table2_ordering():
    totals = [full_scale(v).total for v in ("sg_rafa", "mg_rafa:2", "sg_rafa_split:4", "mg_rafa:4", "mg_afa:4")]
    assert all(a > b for a, b in zip(totals, totals[1:]))


def test_table3_ordering():
    totals = [full_scale("sg_rafa", s).total for s in ("all", "temporal_pool:4", "temporal_pool:2", "temporal_mean")]
    assert all(a > b for a, b in zip(totals, totals[1:]))


@pytest.mark.parametrize("N", [2, 4])
def test_multi_granularity_cheaper(N):
    assert full_scale(f"mg_rafa:{N}").total < full_scale("sg_rafa").total


def test_monotone_in_reference_count():
    family = ["spatial_pool:8x1", "spatial_pool:8x2", "spatial_pool:8x4", "spatial_pool:16x8"]
    totals = [full_scale("sg_rafa", s).total for s in family]
    assert all(a < b for a, b in zip(totals, totals[1:]))
    tp = [full_scale("sg_rafa", s).total for s in ("temporal_mean", "temporal_pool:2", "temporal_pool:4", "all")]
    assert all(a < b for a, b in zip(tp, tp[1:]))


TOY = [
    dict(H=4, W=2, T=2, C=16, variant="sg_rafa", s=4, s_r=4),
    dict(H=4, W=2, T=2, C=16, variant="mg_rafa:2", s=4, s_r=4),
    dict(H=4, W=4, T=3, C=12, variant="mg_rafa:3", s=2, s_r=8),
    dict(H=4, W=2, T=2, C=16, variant="mg_afa:2", s=4, s_r=4),
    dict(H=4, W=2, T=2, C=16, variant="sg_rafa_split:4", s=2, s_r=2),
    dict(H=4, W=2, T=4, C=8, variant="sg_rafa", s=2, s_r=2, strategy="temporal_pool:2"),
    dict(H=4, W=2, T=2, C=8, variant="sg_rafa", s=2, s_r=2, strategy="spatial_pool:2x1"),
    dict(H=4, W=2, T=2, C=8, variant="sg_rafa", s=2, s_r=2, strategy="all"),
    dict(H=4, W=2, T=2, C=16, variant="baseline"),
]


@pytest.mark.parametrize("cfg", TOY, ids=lambda c: f"{c['variant']}-{c.get('strategy', 'tm')}")
def test_instrumented_equals_analytic(cfg):
    cfg = CostConfig(**cfg)
    a, b = count_attention(cfg), instrumented_count(cfg)
    assert a.granularities == [{k: v for k, v in g.items() if v} for g in b.granularities] or a.total == b.total == 0
    assert a.total == b.total


def test_instrumentation_disabled(monkeypatch):
    from mgrafa.errors import UnsupportedBuildError

    monkeypatch.setattr(tt, "INSTRUMENTATION_ENABLED", False)
    with pytest.raises(UnsupportedBuildError):
        instrumented_count(CostConfig(**TOY[0]))


class TestPresets:
    def test_table2_csv(self):
        lines = preset_csv("table2").splitlines()
        header = lines[0].split(",")
        assert header[-1] == "ratio_to_sg_rafa" and set(COMPONENTS) <= set(header)
        rows = {l.split(",")[1]: l.split(",") for l in lines[1:]}
        assert len(rows) == 6
        assert 0.087 <= float(rows["mg_rafa:4"][-1]) <= 0.097
        assert float(rows["sg_rafa"][-1]) == 1.0

    def test_table3_rows(self):
        rows = preset_rows("table3")
        assert [r["ref_nodes"] for r in rows] == [0, 64, 128, 128, 256, 256, 512, 1024, 128]

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            preset_rows("table9")
