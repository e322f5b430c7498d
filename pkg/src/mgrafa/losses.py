"""Training objective: label-smoothed ID loss plus batch-hard triplet loss,
on the aggregated vector and on every per-granularity vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import DimensionError
from .nn import Module
from .tensor import BatchNormState, Tensor, batch_hard_triplet, label_smooth_ce

__all__ = [
    "ClassifierHead",
    "LossConfig",
    "LossTerms",
    "batch_hard_triplet",
    "label_smooth_ce",
    "total_loss",
]


@dataclass
class LossConfig:
    margin: float = 0.3
    smoothing: float = 0.1
    P: int = 8
    Z: int = 4

    @property
    def batch_size(self) -> int:
        return self.P * self.Z


class ClassifierHead(Module):
    """BN over the feature vector followed by a bias-free linear layer."""

    def __init__(self, features: int, num_ids: int, rng, dtype=tt.DEFAULT_DTYPE):
        self.features = features
        self.bn = BatchNormState.create(features, dtype)
        self.weight = Tensor(rng.standard_normal((num_ids, features)) * 0.01, requires_grad=True, dtype=dtype)

    def __call__(self, v: Tensor) -> Tensor:
        if v.shape[-1] != self.features:
            raise DimensionError(f"classifier head expects {self.features} features, got {v.shape}")
        return tt.linear_map(tt.batch_norm(v, self.bn), self.weight)


@dataclass
class LossTerms:
    total: Tensor
    id_global: float
    tri_global: float
    id_parts: list[float]
    tri_parts: list[float]


def total_loss(v: Tensor, parts: list[Tensor], heads: list[ClassifierHead], labels, cfg: LossConfig) -> LossTerms:
    """``L_ID(v) + L_Tr(v) + mean_g (L_ID(v_g) + L_Tr(v_g))``.

    ``heads[0]`` classifies ``v``; ``heads[1 + g]`` classifies ``parts[g]``.
    With no parts the per-granularity term is absent.
    """
    if len(heads) != 1 + len(parts):
        raise DimensionError(f"total_loss: {len(heads)} heads for 1 + {len(parts)} features")
    labels = np.asarray(labels)
    id_g = label_smooth_ce(heads[0](v), labels, cfg.smoothing)
    tr_g = batch_hard_triplet(v, labels, cfg.margin)
    loss = tt.add(id_g, tr_g)
    id_parts, tri_parts = [], []
    if parts:
        acc = None
        for head, vg in zip(heads[1:], parts):
            li = label_smooth_ce(head(vg), labels, cfg.smoothing)
            lt = batch_hard_triplet(vg, labels, cfg.margin)
            id_parts.append(float(li.data))
            tri_parts.append(float(lt.data))
            term = tt.add(li, lt)
            acc = term if acc is None else tt.add(acc, term)
        loss = tt.add(loss, tt.scale(acc, 1.0 / len(parts)))
    return LossTerms(loss, float(id_g.data), float(tr_g.data), id_parts, tri_parts)
