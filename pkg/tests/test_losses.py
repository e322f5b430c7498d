import itertools
import math

import numpy as np
import pytest

from mgrafa.errors import BatchCompositionError, ContractError, DimensionError
from mgrafa.losses import ClassifierHead, LossConfig, batch_hard_triplet, label_smooth_ce, total_loss
from mgrafa.tensor import Tensor, grad_check


def triplet_oracle(f, labels, margin):
    """Exhaustive: per anchor, the worst hinge over every (positive, negative) pair."""
    total = 0.0
    b = len(labels)
    for a in range(b):
        worst = 0.0
        for p, n in itertools.product(range(b), range(b)):
            if p == a or labels[p] != labels[a] or labels[n] == labels[a]:
                continue
            dp = math.sqrt(sum((x - y) ** 2 for x, y in zip(f[a], f[p])) + 1e-12)
            dn = math.sqrt(sum((x - y) ** 2 for x, y in zip(f[a], f[n])) + 1e-12)
            worst = max(worst, margin + dp - dn)
        total += worst
    return total / b


def ce_oracle(logits, labels, eps):
    b, k = logits.shape
    total = 0.0
    for i in range(b):
        m = max(logits[i])
        lse = m + math.log(sum(math.exp(z - m) for z in logits[i]))
        for j in range(k):
            q = (1 - eps) * (j == labels[i]) + eps / k
            total -= q * (logits[i][j] - lse)
    return total / b


class TestTriplet:
    def test_satisfied_margin(self):
        f = Tensor(np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]]))
        assert float(batch_hard_triplet(f, [0, 0, 1, 1], 0.3).data) == 0.0

    def test_hand_1d(self):
        f = Tensor(np.array([[0.0], [1.0], [10.0], [11.0]]))
        assert float(batch_hard_triplet(f, ["A", "A", "B", "B"], 0.3).data) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_oracle(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((8, 3))
        labels = rng.permutation(np.repeat(np.arange(4), 2))
        got = float(batch_hard_triplet(Tensor(f), labels, 0.3).data)
        assert abs(got - triplet_oracle(f, labels, 0.3)) < 1e-6

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        f = rng.standard_normal((6, 4))
        labels = [0, 0, 1, 1, 2, 2]
        a = float(batch_hard_triplet(Tensor(f), labels, 0.5).data)
        b = float(batch_hard_triplet(Tensor(f + rng.standard_normal(4) * 3), labels, 0.5).data)
        assert abs(a - b) < 1e-9

    def test_missing_positive_named(self):
        with pytest.raises(BatchCompositionError, match="label 7"):
            batch_hard_triplet(Tensor(np.zeros((3, 2))), [1, 1, 7], 0.3)

    def test_missing_negative(self):
        with pytest.raises(BatchCompositionError):
            batch_hard_triplet(Tensor(np.zeros((2, 2))), [1, 1], 0.3)


class TestLabelSmoothing:
    @pytest.mark.parametrize("eps", [0.0, 0.1, 0.5])
    def test_uniform_logits(self, eps):
        loss = label_smooth_ce(Tensor(np.zeros((3, 4))), [0, 1, 3], eps)
        assert abs(float(loss.data) - math.log(4)) < 1e-12

    def test_plain_cross_entropy(self):
        loss = label_smooth_ce(Tensor(np.array([[2.0, 0.0]])), [0], 0.0)
        assert abs(float(loss.data) - math.log(1 + math.exp(-2))) < 1e-12

    def test_oracle(self):
        rng = np.random.default_rng(6)
        logits = rng.standard_normal((5, 8)) * 3
        labels = rng.integers(0, 8, 5)
        got = float(label_smooth_ce(Tensor(logits), labels, 0.1).data)
        assert abs(got - ce_oracle(logits, labels, 0.1)) < 1e-6

    def test_non_negative_and_shift_invariant(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            logits = rng.standard_normal((4, 6)) * 5
            labels = rng.integers(0, 6, 4)
            a = float(label_smooth_ce(Tensor(logits), labels, 0.2).data)
            b = float(label_smooth_ce(Tensor(logits + rng.standard_normal((4, 1)) * 10), labels, 0.2).data)
            assert a >= 0 and abs(a - b) < 1e-9

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            label_smooth_ce(Tensor(np.zeros((2, 3))), [0, 3], 0.1)


def _heads(widths, num_ids, seed=0):
    rng = np.random.default_rng(seed)
    return [ClassifierHead(w, num_ids, rng, np.float64) for w in widths]


class TestTotalLoss:
    def test_single_granularity_doubles(self):
        rng = np.random.default_rng(8)
        v = Tensor(rng.standard_normal((6, 4)))
        labels = [0, 0, 1, 1, 2, 2]
        h = _heads([4], 3)[0]
        cfg = LossConfig()
        terms = total_loss(v, [v], [h, h], labels, cfg)
        single = float(label_smooth_ce(h(v), labels, 0.1).data) + float(batch_hard_triplet(v, labels, 0.3).data)
        assert abs(float(terms.total.data) - 2 * single) < 1e-9

    def test_zeroed_parts(self):
        rng = np.random.default_rng(9)
        v = Tensor(rng.standard_normal((6, 4)))
        labels = [0, 0, 1, 1, 2, 2]
        heads = _heads([4, 2, 2], 3)
        cfg = LossConfig(margin=0.0)
        zero = Tensor(np.zeros((6, 2)))
        terms = total_loss(v, [zero, zero], heads, labels, cfg)
        base = float(label_smooth_ce(heads[0](v), labels, 0.1).data) + float(batch_hard_triplet(v, labels, 0.0).data)
        assert abs(float(terms.total.data) - (base + math.log(3))) < 1e-9

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(10)
        v, p1, p2 = (rng.standard_normal((8, w)) for w in (4, 2, 2))
        labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
        heads = _heads([4, 2, 2], 4)
        perm = rng.permutation(8)
        a = total_loss(Tensor(v), [Tensor(p1), Tensor(p2)], heads, labels, LossConfig())
        b = total_loss(Tensor(v[perm]), [Tensor(p1[perm]), Tensor(p2[perm])], heads, labels[perm], LossConfig())
        assert abs(float(a.total.data) - float(b.total.data)) < 1e-9

    def test_head_width_mismatch(self):
        with pytest.raises(DimensionError):
            total_loss(Tensor(np.zeros((4, 4))), [Tensor(np.zeros((4, 2)))], _heads([4, 3], 2), [0, 0, 1, 1], LossConfig())
        with pytest.raises(DimensionError):
            total_loss(Tensor(np.zeros((4, 4))), [], _heads([4, 3], 2), [0, 0, 1, 1], LossConfig())

    def test_gradients(self):
        rng = np.random.default_rng(11)
        v = Tensor(rng.standard_normal((8, 4)), requires_grad=True)
        parts = [Tensor(rng.standard_normal((8, 2)), requires_grad=True) for _ in range(2)]
        heads = _heads([4, 2, 2], 4, seed=11)
        labels = np.repeat(np.arange(4), 2)
        params = {"v": v, "p0": parts[0], "p1": parts[1]}
        for i, h in enumerate(heads):
            params.update({f"h{i}.{k}": t for k, t in h.named_parameters().items()})
        report = grad_check(lambda: total_loss(v, parts, heads, labels, LossConfig()).total, params)
        assert report.passed, "\n".join(report.lines())
