"""Closed-form multiply-accumulate counts for the attention modules.

One MAC is counted as one FLOP.  Only the learned linear maps, the relation
product and the weighted aggregation are counted; BN, ReLU, softmax and
pooling are free.  Backbone cost is out of scope.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigurationError
from .feature import FeatureNodeSet
from .mg import Aggregator, GranularitySpec, Variant
from .rafa import reduced_dims
from .refset import Strategy

COMPONENTS = ("mu", "nu", "relation", "phi", "psi", "theta", "aggregation")


@dataclass(frozen=True)
class CostConfig:
    H: int
    W: int
    T: int
    C: int
    variant: str = "sg_rafa"
    s: int = 8
    s_r: int = 8
    strategy: str = "temporal_mean"


@dataclass
class CostReport:
    """MACs per granularity and component; ``granularities[m][name]``."""

    granularities: list[dict[str, int]] = field(default_factory=list)

    def component(self, name: str) -> int:
        return sum(g.get(name, 0) for g in self.granularities)

    def components(self) -> dict[str, int]:
        return {name: self.component(name) for name in COMPONENTS}

    def granularity_total(self, m: int) -> int:
        return sum(self.granularities[m].values())

    @property
    def total(self) -> int:
        return sum(self.granularity_total(m) for m in range(len(self.granularities)))


def _spec(config: CostConfig) -> tuple[Variant, GranularitySpec | None]:
    variant = Variant.parse(config.variant)
    if variant.kind == "baseline":
        return variant, None
    strategy = Strategy.parse(config.strategy)
    spec = GranularitySpec(
        config.C,
        config.H,
        config.W,
        config.T,
        variant.pooling_factors(),
        config.s,
        config.s_r,
        variant.use_relations,
        strategy,
    )
    return variant, spec


def count_attention(config: CostConfig) -> CostReport:
    variant, spec = _spec(config)
    if spec is None:
        return CostReport([])
    report = CostReport()
    Cg = spec.group_width
    for m in range(spec.N):
        h, w = spec.grid(m)
        K = h * w * config.T
        D = spec.ref_nodes(m)
        cs, dr = reduced_dims(Cg, D, config.s, config.s_r)
        if variant.use_relations:
            g = {
                "mu": K * Cg * cs,
                "nu": D * Cg * cs,
                "relation": K * D * cs,
                "phi": K * Cg * cs,
                "psi": K * D * dr,
                "theta": K * (cs + dr) * Cg,
            }
        else:
            g = {"phi": K * Cg * cs, "theta": K * cs * Cg}
        g["aggregation"] = K * Cg
        report.granularities.append(g)
    return report


def instrumented_count(config: CostConfig, seed: int = 0) -> CostReport:
    """Run one forward pass (batch 1) and read the executed MACs per scope."""
    variant = Variant.parse(config.variant)
    agg = Aggregator(
        variant,
        config.C,
        config.H,
        config.W,
        config.T,
        config.s,
        config.s_r,
        Strategy.parse(config.strategy),
        np.random.default_rng(seed),
    )
    agg.eval()
    maps = np.random.default_rng(seed + 1).standard_normal((1, config.T, config.H, config.W, config.C))
    with tt.no_grad(), tt.count_macs() as counter:
        agg(FeatureNodeSet(tt.Tensor(maps)))
    report = CostReport()
    if agg.spec is None:
        if counter.total:
            report.granularities.append({"aggregation": counter.total})
        return report
    for m in range(agg.spec.N):
        g = {name: counter.matching(f"g{m}", name) for name in COMPONENTS}
        report.granularities.append({k: v for k, v in g.items() if v})
    return report


FULL_SCALE = dict(H=16, W=8, T=8, C=2048, s=8, s_r=8)

# (label, variant, reference strategy); reference grids are written H'xW'xT'
VARIANT_SWEEP = [
    ("average pooling", "baseline", "temporal_mean"),
    ("appearance only, 4 granularities", "mg_afa:4", "temporal_mean"),
    ("single granularity", "sg_rafa", "temporal_mean"),
    ("single granularity, 4 channel splits", "sg_rafa_split:4", "temporal_mean"),
    ("2 granularities", "mg_rafa:2", "temporal_mean"),
    ("4 granularities", "mg_rafa:4", "temporal_mean"),
]

REFERENCE_SWEEP = [
    ("average pooling", "baseline", "temporal_mean"),
    ("spatial pool 8x1x8", "sg_rafa", "spatial_pool:8x1"),
    ("spatial pool 8x2x8", "sg_rafa", "spatial_pool:8x2"),
    ("spatial pool 4x4x8", "sg_rafa", "spatial_pool:4x4"),
    ("spatial pool 8x4x8", "sg_rafa", "spatial_pool:8x4"),
    ("temporal pool 16x8x2", "sg_rafa", "temporal_pool:2"),
    ("temporal pool 16x8x4", "sg_rafa", "temporal_pool:4"),
    ("all nodes 16x8x8", "sg_rafa", "all"),
    ("temporal mean 16x8x1", "sg_rafa", "temporal_mean"),
]

PRESETS = {"table2": VARIANT_SWEEP, "table3": REFERENCE_SWEEP}


def preset_rows(name: str, extents: dict | None = None) -> list[dict]:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown flops preset {name!r}; choose from {sorted(PRESETS)}")
    ext = dict(FULL_SCALE if extents is None else extents)
    rows = []
    for label, variant, strategy in PRESETS[name]:
        cfg = CostConfig(variant=variant, strategy=strategy, **ext)
        report = count_attention(cfg)
        D = 0 if variant == "baseline" else Strategy.parse(strategy).num_nodes(cfg.H, cfg.W, cfg.T)
        rows.append(dict(label=label, variant=variant, strategy=strategy, ref_nodes=D, report=report))
    if name == "table2":
        sg = next(r["report"].total for r in rows if r["variant"] == "sg_rafa")
        for r in rows:
            r["ratio_to_sg"] = r["report"].total / sg
    return rows


def preset_csv(name: str, extents: dict | None = None) -> str:
    rows = preset_rows(name, extents)
    header = ["row", "variant", "strategy", "ref_nodes", *COMPONENTS, "total", "gmacs"]
    if name == "table2":
        header.append("ratio_to_sg_rafa")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        rep = r["report"]
        line = [r["label"], r["variant"], r["strategy"], r["ref_nodes"]]
        line += [rep.component(c) for c in COMPONENTS]
        line += [rep.total, f"{rep.total / 1e9:.6f}"]
        if name == "table2":
            line.append(f"{r['ratio_to_sg']:.6f}")
        writer.writerow(line)
    return buf.getvalue()


__all__ = [
    "COMPONENTS",
    "CostConfig",
    "CostReport",
    "FULL_SCALE",
    "PRESETS",
    "count_attention",
    "instrumented_count",
    "preset_csv",
    "preset_rows",
]
