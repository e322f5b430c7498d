import numpy as np
import pytest

from mgrafa.retrieval import cmc_map, distance_matrix


def brute_force(distmat, q_ids, g_ids):
    """Precision at every correct hit, by explicit ranking loops."""
    Q, G = distmat.shape
    cmc = np.zeros(G)
    aps = []
    for q in range(Q):
        ranked = sorted(range(G), key=lambda g: (distmat[q, g], g))
        correct = [g_ids[g] == q_ids[q] for g in ranked]
        if not any(correct):
            continue
        first = correct.index(True)
        for k in range(first, G):
            cmc[k] += 1
        precs, hits = [], 0
        for pos, ok in enumerate(correct, 1):
            if ok:
                hits += 1
                precs.append(hits / pos)
        aps.append(sum(precs) / len(precs))
    return cmc / len(aps), float(np.mean(aps))


def test_hand_case():
    res = cmc_map(np.array([[0.1, 0.5, 0.9]]), [1], [0], [2, 1, 3], [1, 1, 1])
    assert res.rank(1) == 0 and res.rank(2) == 1
    assert res.mAP == 0.5


def test_tie_break_by_gallery_index():
    res = cmc_map(np.ones((1, 4)), [7], [0], [7, 1, 2, 3], [1, 1, 1, 1])
    assert res.rank(1) == 1 and res.mAP == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    distmat = rng.random((8, 20))
    q_ids = rng.integers(0, 4, 8)
    g_ids = np.concatenate([np.arange(4), rng.integers(0, 4, 16)])
    res = cmc_map(distmat, q_ids, np.zeros(8), g_ids, np.ones(20))
    cmc, mAP = brute_force(distmat, q_ids, g_ids)
    np.testing.assert_allclose(res.cmc, cmc, atol=1e-9)
    assert abs(res.mAP - mAP) < 1e-9


def test_cmc_monotone_and_complete():
    rng = np.random.default_rng(3)
    distmat = rng.random((6, 10))
    res = cmc_map(distmat, np.arange(6) % 3, np.zeros(6), np.arange(10) % 3, np.ones(10))
    assert (np.diff(res.cmc) >= 0).all() and res.cmc[-1] == 1.0


def test_monotone_transform_invariance():
    rng = np.random.default_rng(4)
    distmat = rng.random((6, 10))
    args = (np.arange(6) % 3, np.zeros(6), np.arange(10) % 3, np.ones(10))
    a = cmc_map(distmat, *args)
    b = cmc_map(np.exp(3 * distmat) + 2, *args)
    np.testing.assert_array_equal(a.cmc, b.cmc)
    assert a.mAP == b.mAP


def test_gallery_permutation():
    rng = np.random.default_rng(5)
    distmat = rng.random((6, 10))
    g_ids = np.arange(10) % 3
    perm = rng.permutation(10)
    a = cmc_map(distmat, np.arange(6) % 3, np.zeros(6), g_ids, np.ones(10))
    b = cmc_map(distmat[:, perm], np.arange(6) % 3, np.zeros(6), g_ids[perm], np.ones(10))
    np.testing.assert_allclose(a.cmc, b.cmc)
    assert abs(a.mAP - b.mAP) < 1e-12


def test_query_without_match_excluded():
    res = cmc_map(np.random.default_rng(6).random((2, 3)), [0, 9], [0, 0], [0, 1, 2], [1, 1, 1])
    assert res.num_valid == 1 and res.num_excluded == 1


def test_distance_matrix():
    rng = np.random.default_rng(7)
    q, g = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    expect = np.sqrt(((q[:, None] - g[None]) ** 2).sum(-1))
    np.testing.assert_allclose(distance_matrix(q, g), expect, atol=1e-9)
