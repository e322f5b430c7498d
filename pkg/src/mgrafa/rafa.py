"""Reference-aided attentive feature aggregation at a single granularity.

For node features ``x_i`` and reference nodes ``y_j``:

* relation   ``r[i, j] = mu(x_i) . nu(y_j)``
* attention  ``a_i = theta([phi(x_i), psi(r_i)])``
* weights    ``softmax`` of ``a`` over the node index, separately per channel
* output     ``v = sum_i a_hat_i * x_i``

Every embedding is a per-node linear map followed by BN and ReLU.  With
``use_relations=False`` the relation branch (mu, nu, psi) is dropped and
``a_i = theta(phi(x_i))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ConfigurationError, ContractError, DimensionError
from .feature import FeatureNodeSet
from .nn import Embedding, Module
from .refset import TEMPORAL_MEAN, ReferenceSet, Strategy, build_reference_set
from .tensor import Tensor


def reduced_dims(C: int, D: int, s: int, s_r: int) -> tuple[int, int]:
    """Embedding widths ``(C / s, max(1, D // s_r))``."""
    if s < 1 or C % s:
        raise ConfigurationError(f"reduction ratio s={s} must divide C={C}")
    if s_r < 1:
        raise ConfigurationError(f"relation reduction ratio s_r={s_r} must be positive")
    return C // s, max(1, D // s_r)


class AttentionParams(Module):
    """Learned matrices of one attention branch."""

    def __init__(
        self,
        C: int,
        D: int,
        s: int = 8,
        s_r: int | None = None,
        use_relations: bool = True,
        rng: np.random.Generator | None = None,
        dtype=tt.DEFAULT_DTYPE,
        use_bn: bool = True,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        s_r = s if s_r is None else s_r
        cs, dr = reduced_dims(C, D, s, s_r)
        self.C, self.D, self.s, self.s_r = C, D, s, s_r
        self.use_relations = use_relations
        self.phi = Embedding(C, cs, rng, dtype, use_bn)
        if use_relations:
            self.mu = Embedding(C, cs, rng, dtype, use_bn)
            self.nu = Embedding(C, cs, rng, dtype, use_bn)
            self.psi = Embedding(D, dr, rng, dtype, use_bn)
            self.theta = Embedding(cs + dr, C, rng, dtype, use_bn)
        else:
            self.theta = Embedding(cs, C, rng, dtype, use_bn)


@dataclass
class RelationBlock:
    matrix: Tensor  # [..., K, D], row i is the relation vector of node i


@dataclass
class AttentionScores:
    raw: Tensor  # [..., K, C]
    normalized: Tensor  # [..., K, C], each channel sums to 1 over K


def compute_relations(nodes: Tensor, ref: ReferenceSet, params: AttentionParams) -> RelationBlock:
    if not params.use_relations:
        raise ContractError("compute_relations: params were built without the relation branch")
    if ref.D != params.D:
        raise DimensionError(f"compute_relations: reference has D={ref.D}, params expect D={params.D}")
    if nodes.shape[-1] != params.C or ref.nodes.shape[-1] != params.C:
        raise DimensionError(
            f"compute_relations: node width {nodes.shape[-1]} / reference width "
            f"{ref.nodes.shape[-1]} vs C={params.C}"
        )
    with tt.mac_scope("mu"):
        mu = params.mu(nodes)
    with tt.mac_scope("nu"):
        nu = params.nu(ref.nodes)
    with tt.mac_scope("relation"):
        r = tt.matmul_nt(mu, nu)
    return RelationBlock(r)


def infer_attention(nodes: Tensor, relations: RelationBlock | None, params: AttentionParams) -> AttentionScores:
    if (relations is not None) != params.use_relations:
        raise ContractError(
            "infer_attention: relations must be given exactly when use_relations is set "
            f"(use_relations={params.use_relations})"
        )
    with tt.mac_scope("phi"):
        feats = params.phi(nodes)
    if relations is not None:
        with tt.mac_scope("psi"):
            rel = params.psi(relations.matrix)
        feats = tt.concat_channels([feats, rel])
    with tt.mac_scope("theta"):
        raw = params.theta(feats)
    return AttentionScores(raw, tt.softmax_axis(raw, axis=-2))


def aggregate(nodes: Tensor, scores: AttentionScores) -> Tensor:
    if nodes.shape != scores.normalized.shape:
        raise DimensionError(f"aggregate: nodes {nodes.shape} vs attention {scores.normalized.shape}")
    with tt.mac_scope("aggregation"):
        return tt.weighted_sum_nodes(nodes, scores.normalized)


def rafa_on_nodes(fset: FeatureNodeSet, ref: ReferenceSet | None, params: AttentionParams):
    nodes = fset.nodes()
    relations = compute_relations(nodes, ref, params) if params.use_relations else None
    scores = infer_attention(nodes, relations, params)
    return aggregate(nodes, scores), scores


def sg_rafa_forward(
    fset: FeatureNodeSet, strategy: Strategy, params: AttentionParams
) -> tuple[Tensor, AttentionScores]:
    """Reference set, relations, attention and aggregation in one pass."""
    ref = build_reference_set(fset, strategy) if params.use_relations else None
    return rafa_on_nodes(fset, ref, params)


__all__ = [
    "AttentionParams",
    "AttentionScores",
    "RelationBlock",
    "TEMPORAL_MEAN",
    "aggregate",
    "compute_relations",
    "infer_attention",
    "reduced_dims",
    "sg_rafa_forward",
]
