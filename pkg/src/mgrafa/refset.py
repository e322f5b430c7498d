"""Reference node sets for relation modeling."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as tt
from .errors import ConfigurationError
from .feature import FeatureNodeSet
from .tensor import Tensor


@dataclass(frozen=True)
class Strategy:
    """One of ``temporal_mean``, ``spatial_pool`` (to h x w), ``temporal_pool`` (to t frames), ``all``."""

    kind: str = "temporal_mean"
    h: int = 0
    w: int = 0
    t: int = 0

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        name, _, arg = text.strip().partition(":")
        if name == "temporal_mean" and not arg:
            return cls("temporal_mean")
        if name == "all" and not arg:
            return cls("all")
        if name == "spatial_pool":
            try:
                h, w = (int(v) for v in arg.lower().split("x"))
            except ValueError:
                raise ConfigurationError(f"refset strategy {text!r}: expected spatial_pool:HxW") from None
            return cls("spatial_pool", h=h, w=w)
        if name == "temporal_pool":
            try:
                return cls("temporal_pool", t=int(arg))
            except ValueError:
                raise ConfigurationError(f"refset strategy {text!r}: expected temporal_pool:T") from None
        raise ConfigurationError(f"unknown refset strategy {text!r}")

    def __str__(self) -> str:
        if self.kind == "spatial_pool":
            return f"spatial_pool:{self.h}x{self.w}"
        if self.kind == "temporal_pool":
            return f"temporal_pool:{self.t}"
        return self.kind

    def extents(self, H: int, W: int, T: int) -> tuple[int, int, int]:
        """Reference grid ``(H', W', T')`` produced from an ``H x W x T`` node set."""
        if self.kind == "temporal_mean":
            return H, W, 1
        if self.kind == "all":
            return H, W, T
        if self.kind == "spatial_pool":
            if self.h < 1 or self.w < 1 or H % self.h or W % self.w:
                raise ConfigurationError(f"spatial_pool:{self.h}x{self.w} does not divide grid {H}x{W}")
            return self.h, self.w, T
        if self.kind == "temporal_pool":
            if self.t < 1 or T % self.t:
                raise ConfigurationError(f"temporal_pool:{self.t} does not divide {T} frames")
            return H, W, self.t
        raise ConfigurationError(f"unknown refset strategy {self.kind!r}")

    def num_nodes(self, H: int, W: int, T: int) -> int:
        h, w, t = self.extents(H, W, T)
        return h * w * t


TEMPORAL_MEAN = Strategy("temporal_mean")


@dataclass
class ReferenceSet:
    nodes: Tensor  # [..., D, C]
    strategy: Strategy
    extents: tuple[int, int, int]  # (H', W', T')

    @property
    def D(self) -> int:
        return self.nodes.shape[-2]


def build_reference_set(fset: FeatureNodeSet, strategy: Strategy = TEMPORAL_MEAN) -> ReferenceSet:
    H, W, T, C = fset.H, fset.W, fset.T, fset.C
    h, w, t = strategy.extents(H, W, T)
    lead = fset.batch_shape
    maps = fset.maps
    tax = len(lead)
    if strategy.kind == "temporal_mean":
        grid = tt.reduce_mean_axis(maps, tax)
    elif strategy.kind == "all":
        grid = maps
    elif strategy.kind == "spatial_pool":
        grid = tt.avg_pool_spatial(maps, (H // h, W // w))
    else:
        grouped = tt.reshape(maps, (*lead, t, T // t, H, W, C))
        grid = tt.reduce_mean_axis(grouped, tax + 1)
    nodes = tt.reshape(grid, (*lead, h * w * t, C))
    return ReferenceSet(nodes, strategy, (h, w, t))
