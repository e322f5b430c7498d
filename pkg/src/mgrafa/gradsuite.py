"""Finite-difference checks of every differentiable operation and the full model loss.

All cases run in float64 on small random instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as tt
from .feature import FeatureNodeSet
from .losses import ClassifierHead, LossConfig, total_loss
from .mg import Aggregator, Variant
from .tensor import BatchNormState, GradCheckReport, Tensor, grad_check


def _param(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _const(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def _weighted(out: Tensor, rng) -> Tensor:
    """Contract an output with a fixed random tensor so every entry matters."""
    return tt.sum_all(tt.mul(out, _const(rng.standard_normal(out.shape))))


def _case_linear_map(rng):
    x, w = _param(rng.standard_normal((2, 5, 3))), _param(rng.standard_normal((4, 3)))
    return (lambda: _weighted(tt.linear_map(x, w), np.random.default_rng(1))), {"x": x, "w": w}


def _case_matmul_nt(rng):
    a, b = _param(rng.standard_normal((2, 5, 3))), _param(rng.standard_normal((2, 4, 3)))
    return (lambda: _weighted(tt.matmul_nt(a, b), np.random.default_rng(1))), {"a": a, "b": b}


def _case_elementwise(rng):
    a, b = _param(rng.standard_normal((3, 4))), _param(rng.standard_normal((3, 4)))

    def build():
        out = tt.add(tt.mul(a, b), tt.scale(tt.relu(a), 0.7))
        return _weighted(out, np.random.default_rng(1))

    return build, {"a": a, "b": b}


def _case_softmax(rng):
    x = _param(rng.standard_normal((2, 6, 3)))
    return (lambda: _weighted(tt.softmax_axis(x, axis=-2), np.random.default_rng(1))), {"x": x}


def _case_weighted_sum(rng):
    x, a = _param(rng.standard_normal((2, 6, 3))), _param(rng.random((2, 6, 3)))
    return (lambda: _weighted(tt.weighted_sum_nodes(x, a), np.random.default_rng(1))), {"x": x, "a": a}


def _case_shape_ops(rng):
    x = _param(rng.standard_normal((2, 4, 4, 6)))

    def build():
        pooled = tt.reshape(tt.avg_pool_spatial(x, 2), (2, 4, 6))
        mean = tt.reduce_mean_axis(pooled, 1)
        cat = tt.concat_channels([tt.slice_channels(mean, 0, 2), tt.slice_channels(mean, 3, 6)])
        return _weighted(cat, np.random.default_rng(1))

    return build, {"x": x}


def _case_conv3x3(rng):
    x = _param(rng.standard_normal((1, 4, 4, 2)))
    w, b = _param(rng.standard_normal((3, 3, 3, 2)) * 0.3), _param(rng.standard_normal(3))
    return (lambda: _weighted(tt.conv3x3(x, w, b), np.random.default_rng(1))), {"x": x, "w": w, "b": b}


def _bn_case(training: bool):
    def case(rng):
        x = _param(rng.standard_normal((6, 3)))
        bn = BatchNormState.create(3, np.float64)
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
        bn.beta.data[:] = rng.uniform(-0.5, 0.5, 3)
        bn.running_mean[:] = rng.uniform(-0.3, 0.3, 3)
        bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
        bn.training = training
        return (lambda: _weighted(tt.batch_norm(x, bn), np.random.default_rng(1))), {
            "x": x,
            "gamma": bn.gamma,
            "beta": bn.beta,
        }

    return case


def _case_label_smooth_ce(rng):
    logits = _param(rng.standard_normal((6, 4)))
    labels = rng.integers(0, 4, 6)
    return (lambda: tt.label_smooth_ce(logits, labels, 0.1)), {"logits": logits}


def _case_batch_hard_triplet(rng):
    f = _param(rng.standard_normal((8, 4)))
    labels = np.repeat(np.arange(4), 2)
    return (lambda: tt.batch_hard_triplet(f, labels, 0.3)), {"features": f}


def _case_mg_rafa2_loss(rng):
    """mg_rafa:2 forward on a toy node set plus the combined training loss."""
    C, H, W, T = 8, 4, 2, 3
    agg = Aggregator(Variant.parse("mg_rafa:2"), C, H, W, T, s=2, s_r=2, rng=rng, dtype=np.float64)
    for bn in agg.batch_norms():
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta.data[:] = rng.uniform(-0.2, 0.5, bn.beta.shape)
    agg.train()
    heads = [ClassifierHead(w, 2, rng, np.float64) for w in [C, *agg.part_widths]]
    for h in heads:
        h.weight.data[:] = rng.standard_normal(h.weight.shape)
    maps = _param(rng.standard_normal((4, T, H, W, C)))
    labels = np.array([0, 0, 1, 1])

    def build():
        v, pyramid = agg(FeatureNodeSet(maps))
        return total_loss(v, pyramid.parts, heads, labels, LossConfig()).total

    params = {"maps": maps}
    params.update({f"agg.{k}": p for k, p in agg.named_parameters().items()})
    for i, h in enumerate(heads):
        params.update({f"head{i}.{k}": p for k, p in h.named_parameters().items()})
    return build, params


CASES: dict[str, Callable] = {
    "linear_map": _case_linear_map,
    "matmul_nt": _case_matmul_nt,
    "add_mul_scale_relu": _case_elementwise,
    "softmax_axis": _case_softmax,
    "weighted_sum_nodes": _case_weighted_sum,
    "pool_mean_slice_concat_reshape": _case_shape_ops,
    "conv3x3": _case_conv3x3,
    "batch_norm_train": _bn_case(True),
    "batch_norm_eval": _bn_case(False),
    "label_smooth_ce": _case_label_smooth_ce,
    "batch_hard_triplet": _case_batch_hard_triplet,
    "mg_rafa2_total_loss": _case_mg_rafa2_loss,
}


@dataclass
class SuiteResult:
    case: str
    seed: int
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.case} seed={self.seed} max_rel_error={self.report.max_rel_error:.3e}"


def run_suite(seeds=range(5), tol: float = 1e-4, cases=None) -> list[SuiteResult]:
    results = []
    for name in cases or CASES:
        for seed in seeds:
            build, params = CASES[name](np.random.default_rng([seed, len(name)]))
            results.append(SuiteResult(name, seed, grad_check(build, params, tol=tol)))
    return results


__all__ = ["CASES", "SuiteResult", "run_suite"]
