"""Backbone + aggregation + classifier heads as one trainable unit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .feature import Backbone, BackboneConfig, FeatureNodeSet
from .losses import ClassifierHead
from .mg import Aggregator, GranularityPyramid, Variant
from .nn import Module
from .refset import Strategy
from .tensor import Tensor


@dataclass
class ModelConfig:
    variant: str = "mg_rafa:2"
    s: int = 8
    s_r: int = 8
    T: int = 8
    strategy: str = "temporal_mean"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)


class ReidModel(Module):
    def __init__(self, cfg: ModelConfig, num_ids: int, seed: int = 0, dtype=tt.DEFAULT_DTYPE):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone, rng, dtype)
        H, W = cfg.backbone.grid
        C = cfg.backbone.out_channels
        self.aggregator = Aggregator(
            Variant.parse(cfg.variant), C, H, W, cfg.T, cfg.s, cfg.s_r, Strategy.parse(cfg.strategy), rng, dtype
        )
        widths = [C, *self.aggregator.part_widths]
        self.heads = [ClassifierHead(w, num_ids, rng, dtype) for w in widths]

    def features(self, frames: Tensor) -> FeatureNodeSet:
        return self.backbone(frames)

    def __call__(self, frames: Tensor) -> tuple[Tensor, GranularityPyramid]:
        """``frames`` ``[B, T, h0, w0, 3]`` -> (``v`` ``[B, C]``, pyramid)."""
        return self.aggregator(self.backbone(frames))
