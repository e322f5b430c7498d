"""Multi-granularity aggregation and the model variants built on it.

Channels are split into N groups; group m (0-based) is pooled spatially by
``2**m`` and aggregated with its own attention parameters against the
temporal mean of its pooled maps.  The fused group vectors are concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import ConfigurationError
from .feature import FeatureNodeSet
from .nn import Module
from .rafa import AttentionParams, AttentionScores, rafa_on_nodes
from .refset import TEMPORAL_MEAN, Strategy, build_reference_set
from .tensor import Tensor

VARIANTS = ("baseline", "sg_rafa", "sg_rafa_split", "mg_rafa", "mg_afa")


@dataclass(frozen=True)
class Variant:
    kind: str
    groups: int = 1

    @classmethod
    def parse(cls, text: str) -> "Variant":
        name, _, arg = text.strip().partition(":")
        if name not in VARIANTS:
            raise ConfigurationError(f"unknown model variant {text!r}")
        if name in ("baseline", "sg_rafa"):
            if arg:
                raise ConfigurationError(f"variant {name} takes no argument")
            return cls(name, 1)
        try:
            n = int(arg)
        except ValueError:
            raise ConfigurationError(f"variant {text!r}: expected {name}:<int>") from None
        if n < 1:
            raise ConfigurationError(f"variant {text!r}: group count must be >= 1")
        return cls(name, n)

    def __str__(self) -> str:
        return self.kind if self.kind in ("baseline", "sg_rafa") else f"{self.kind}:{self.groups}"

    @property
    def use_relations(self) -> bool:
        return self.kind != "mg_afa"

    def pooling_factors(self) -> list[int]:
        if self.kind in ("mg_rafa", "mg_afa"):
            return [2 ** m for m in range(self.groups)]
        return [1] * self.groups


@dataclass
class GranularitySpec:
    """Extents and hyper-parameters shared by every granularity branch."""

    C: int
    H: int
    W: int
    T: int
    factors: list[int]
    s: int = 8
    s_r: int | None = None
    use_relations: bool = True
    strategy: Strategy = TEMPORAL_MEAN

    def __post_init__(self):
        n = len(self.factors)
        if n < 1 or self.C % n:
            raise ConfigurationError(f"C={self.C} not divisible into {n} channel groups")
        for f in self.factors:
            if self.H % f or self.W % f:
                raise ConfigurationError(f"grid {self.H}x{self.W} not divisible by pooling factor {f}")
        if self.strategy != TEMPORAL_MEAN and any(f != 1 for f in self.factors):
            raise ConfigurationError("non-default reference strategies require pooling factor 1")

    @property
    def N(self) -> int:
        return len(self.factors)

    @property
    def group_width(self) -> int:
        return self.C // self.N

    def grid(self, m: int) -> tuple[int, int]:
        f = self.factors[m]
        return self.H // f, self.W // f

    def ref_nodes(self, m: int) -> int:
        h, w = self.grid(m)
        return self.strategy.num_nodes(h, w, self.T)


@dataclass
class GranularityPyramid:
    node_sets: list[FeatureNodeSet]
    scores: list[AttentionScores] = field(default_factory=list)
    parts: list[Tensor] = field(default_factory=list)


def split_channels(fset: FeatureNodeSet, N: int) -> list[FeatureNodeSet]:
    C = fset.C
    if N < 1 or C % N:
        raise ConfigurationError(f"split_channels: C={C} not divisible by N={N}")
    g = C // N
    return [FeatureNodeSet(tt.slice_channels(fset.maps, m * g, (m + 1) * g)) for m in range(N)]


def build_pyramid(groups: list[FeatureNodeSet], factors: list[int]) -> list[FeatureNodeSet]:
    """Pool group m by ``factors[m]`` over the spatial grid of every frame."""
    if len(groups) != len(factors):
        raise ConfigurationError(f"{len(groups)} groups but {len(factors)} pooling factors")
    return [FeatureNodeSet(tt.avg_pool_spatial(g.maps, f)) for g, f in zip(groups, factors)]


def pyramid_factors(N: int) -> list[int]:
    return [2 ** m for m in range(N)]


def mg_rafa_forward(
    fset: FeatureNodeSet, spec: GranularitySpec, params: list[AttentionParams]
) -> tuple[Tensor, GranularityPyramid]:
    """Returns the concatenated vector and the per-granularity pyramid."""
    if fset.C != spec.C or fset.H != spec.H or fset.W != spec.W:
        raise ConfigurationError(
            f"feature set {fset.H}x{fset.W}x{fset.C} does not match spec {spec.H}x{spec.W}x{spec.C}"
        )
    pooled = build_pyramid(split_channels(fset, spec.N), spec.factors)
    pyramid = GranularityPyramid(pooled)
    for m, (pset, p) in enumerate(zip(pooled, params)):
        with tt.mac_scope(f"g{m}"):
            ref = build_reference_set(pset, spec.strategy) if p.use_relations else None
            v_m, scores = rafa_on_nodes(pset, ref, p)
        pyramid.parts.append(v_m)
        pyramid.scores.append(scores)
    v = pyramid.parts[0] if spec.N == 1 else tt.concat_channels(pyramid.parts)
    return v, pyramid


class Aggregator(Module):
    """Turns a feature node set into one vector per tracklet."""

    def __init__(
        self,
        variant: Variant,
        C: int,
        H: int,
        W: int,
        T: int,
        s: int = 8,
        s_r: int | None = None,
        strategy: Strategy = TEMPORAL_MEAN,
        rng: np.random.Generator | None = None,
        dtype=tt.DEFAULT_DTYPE,
    ):
        self.variant = variant
        self.C = C
        self.spec = None
        self.branches: list[AttentionParams] = []
        if variant.kind == "baseline":
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = GranularitySpec(
            C, H, W, T, variant.pooling_factors(), s, s_r, variant.use_relations, strategy
        )
        for m in range(self.spec.N):
            self.branches.append(
                AttentionParams(
                    self.spec.group_width,
                    self.spec.ref_nodes(m),
                    s,
                    s_r,
                    variant.use_relations,
                    rng,
                    dtype,
                )
            )

    @property
    def part_widths(self) -> list[int]:
        return [] if self.spec is None else [self.spec.group_width] * self.spec.N

    def __call__(self, fset: FeatureNodeSet) -> tuple[Tensor, GranularityPyramid]:
        if self.spec is None:
            with tt.mac_scope("baseline"):
                v = tt.reduce_mean_axis(fset.nodes(), -2)
            return v, GranularityPyramid([fset])
        return mg_rafa_forward(fset, self.spec, self.branches)
