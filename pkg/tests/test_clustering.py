import itertools

import numpy as np
import pytest

from dsel import clustering
from dsel.data import EmbeddingSet
from dsel.errors import InvalidParamError, UnlabeledInputError


def _es(x, labels=None):
    return EmbeddingSet(np.asarray(x, dtype=np.float32), labels)


def test_category_centroids_two_point_mean():
    d = _es([[0, 0], [2, 0], [5, 5]], [0, 0, 1])
    cs = clustering.category_centroids(d)
    assert np.allclose(cs.centroids[0], [1, 0])
    assert cs.counts[0] == 2
    assert cs.origin == clustering.ORIGIN_LABELED


def test_category_centroids_singletons_identity():
    x = np.array([[1, 2], [3, 4], [5, 6]], dtype=np.float32)
    cs = clustering.category_centroids(_es(x, [0, 1, 2]))
    assert np.allclose(cs.centroids, x)


def test_category_centroids_brute_force_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((100, 3))
    labels = rng.integers(0, 3, 100)
    labels[:3] = [0, 1, 2]
    d = _es(x, labels)
    cs = clustering.category_centroids(d)
    for c in range(3):
        ref = np.zeros(3)
        cnt = 0
        for i in range(100):
            if labels[i] == c:
                ref += d.features[i].astype(np.float64)
                cnt += 1
        assert np.allclose(cs.centroids[c], ref / cnt, atol=1e-6)
        assert cs.counts[c] == cnt


def test_category_centroids_requires_labels():
    with pytest.raises(UnlabeledInputError):
        clustering.category_centroids(_es([[1, 2]]))


def test_category_centroids_permutation_invariant():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((50, 4)).astype(np.float32)
    labels = np.concatenate([np.arange(4), rng.integers(0, 4, 46)])
    d = _es(x, labels)
    perm = rng.permutation(50)
    d2 = _es(x[perm], labels[perm])
    a = clustering.category_centroids(d)
    b = clustering.category_centroids(d2)
    assert np.allclose(a.centroids, b.centroids, rtol=1e-10)
    assert np.array_equal(a.counts, b.counts)


def _brute_force_best_2_partition(x):
    """Minimal SSE over all assignments of points into 2 non-empty clusters."""
    n = len(x)
    best = np.inf
    best_assign = None
    for bits in itertools.product([0, 1], repeat=n):
        bits = np.array(bits)
        if bits.min() == bits.max():
            continue
        sse = 0.0
        for c in (0, 1):
            pts = x[bits == c]
            sse += ((pts - pts.mean(axis=0)) ** 2).sum()
        if sse < best - 1e-12:
            best = sse
            best_assign = bits
    return best, best_assign


def test_kmeans_two_separated_pairs():
    x = np.array([[0, 0], [0.5, 0], [10, 0], [10.5, 0]], dtype=np.float32)
    best_sse, best_assign = _brute_force_best_2_partition(x.astype(np.float64))
    cents, assign = clustering.kmeans(_es(x), 2, seed=0)
    assert assign.labels[0] == assign.labels[1]
    assert assign.labels[2] == assign.labels[3]
    assert assign.labels[0] != assign.labels[2]
    assert assign.inertia == pytest.approx(best_sse, abs=1e-9)
    same = (assign.labels == best_assign).all() or (assign.labels == 1 - best_assign).all()
    assert same


def test_kmeans_k_equals_n():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3)).astype(np.float32)
    cents, assign = clustering.kmeans(_es(x), 6, seed=1)
    assert assign.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(assign.labels) == list(range(6))


def test_kmeans_deterministic():
    rng = np.random.default_rng(3)
    d = _es(rng.standard_normal((40, 5)).astype(np.float32))
    _, a = clustering.kmeans(d, 4, seed=9)
    _, b = clustering.kmeans(d, 4, seed=9)
    assert np.array_equal(a.labels, b.labels)
    assert a.inertia == b.inertia


def test_kmeans_inertia_monotone():
    rng = np.random.default_rng(4)
    d = _es(rng.standard_normal((120, 6)).astype(np.float32))
    _, assign = clustering.kmeans(d, 5, seed=7)
    hist = assign.inertia_history
    assert all(hist[i + 1] <= hist[i] + 1e-9 for i in range(len(hist) - 1))


def test_kmeans_shift_invariance():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((30, 3)).astype(np.float32)
    shift = np.array([5.0, -2.0, 1.0], dtype=np.float32)
    c1, a1 = clustering.kmeans(_es(x), 3, seed=5)
    c2, a2 = clustering.kmeans(_es(x + shift), 3, seed=5)
    assert np.array_equal(a1.labels, a2.labels)
    assert np.allclose(c2.centroids, c1.centroids + shift.astype(np.float64), atol=1e-9)


def test_kmeans_rejects_bad_k():
    d = _es(np.zeros((3, 2), np.float32))
    with pytest.raises(InvalidParamError):
        clustering.kmeans(d, 4, seed=0)
    with pytest.raises(InvalidParamError):
        clustering.kmeans(d, 0, seed=0)


def test_kmeans_pp_k1_is_an_instance():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((10, 2)).astype(np.float32)
    cs = clustering.kmeans_pp_init(_es(x), 1, seed=3)
    assert any(np.allclose(cs.centroids[0], row) for row in x.astype(np.float64))


def test_kmeans_pp_duplicate_groups():
    # two far-apart duplicate groups: second seed must land in the other group
    x = np.array([[0, 0]] * 5 + [[100, 0]] * 5, dtype=np.float32)
    for seed in range(20):
        cs = clustering.kmeans_pp_init(_es(x), 2, seed=seed)
        sides = {int(c[0] > 50) for c in cs.centroids}
        assert sides == {0, 1}


def test_kmeans_pp_distribution_matches_d2():
    # 4 points on a line; compare empirical (first, second) seed frequencies
    # against the closed-form uniform * D^2 distribution.
    pts = np.array([[0.0], [1.0], [3.0], [6.0]], dtype=np.float32)
    n = 4
    analytic = np.zeros(n)
    for first in range(n):
        d2 = (pts[:, 0] - pts[first, 0]) ** 2
        probs = d2 / d2.sum()
        analytic += probs / n
    counts = np.zeros(n)
    trials = 100_000
    d = _es(pts)
    for seed in range(trials):
        cs = clustering.kmeans_pp_init(d, 2, seed=seed)
        second = cs.centroids[1, 0]
        counts[int(np.argmin(np.abs(pts[:, 0] - second)))] += 1
    emp = counts / trials
    assert np.abs(emp - analytic).max() < 0.01


def test_semi_supervised_forced_assignment():
    # labeled point far from its own category centroid but near another
    labeled = _es([[0, 0], [0, 0.5], [10, 0], [9.9, 0.1], [9.0, 0.0]], [0, 0, 1, 1, 0])
    unlabeled = _es([[5, 5]])
    res = clustering.semi_supervised_kmeans(labeled, unlabeled, 2, seed=0)
    assert list(res.labels[:5]) == [0, 0, 1, 1, 0]


def test_semi_supervised_unlabeled_copy_joins_its_cluster():
    labeled = _es([[0, 0], [10, 10]], [0, 1])
    unlabeled = _es([[10, 10], [0, 0]])
    res = clustering.semi_supervised_kmeans(labeled, unlabeled, 2, seed=1)
    assert res.labels[2] == res.labels[1]
    assert res.labels[3] == res.labels[0]


def _planted_blobs(rng, centers, n_per, sigma):
    pts, labels = [], []
    for c, center in enumerate(centers):
        pts.append(center + sigma * rng.standard_normal((n_per, len(center))))
        labels += [c] * n_per
    return np.vstack(pts).astype(np.float32), np.array(labels)


def _acc_brute(true, pred, k):
    best = 0
    for perm in itertools.permutations(range(k)):
        best = max(best, sum(perm[p] == t for p, t in zip(pred, true)))
    return best / len(true)


def test_semi_supervised_planted_recovery():
    rng = np.random.default_rng(12)
    sigma = 1.0
    centers = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0]]) * sigma  # 10 sigma apart
    x, truth = _planted_blobs(rng, centers, 30, sigma)
    labeled_mask = truth == 0
    labeled = _es(x[labeled_mask], truth[labeled_mask])
    unlabeled = _es(x[~labeled_mask])
    res = clustering.semi_supervised_kmeans(labeled, unlabeled, 3, seed=4)
    pred_u = res.labels[labeled_mask.sum():]
    assert _acc_brute(truth[~labeled_mask], pred_u, 3) == 1.0


def test_semi_supervised_labeled_never_move():
    rng = np.random.default_rng(13)
    for trial in range(50):
        x = rng.standard_normal((30, 4)).astype(np.float32)
        labels = np.concatenate([np.arange(3), rng.integers(0, 3, 12)])
        labeled = _es(x[:15], labels)
        unlabeled = _es(x[15:])
        res = clustering.semi_supervised_kmeans(
            labeled, unlabeled, 5, seed=trial, record_history=True
        )
        for snapshot in res.label_history:
            assert np.array_equal(snapshot[:15], labels)


def test_semi_supervised_k_below_categories():
    labeled = _es([[0, 0], [1, 1], [2, 2]], [0, 1, 2])
    with pytest.raises(InvalidParamError):
        clustering.semi_supervised_kmeans(labeled, _es([[0, 1]]), 2, seed=0)


def test_semi_supervised_frozen_variant():
    labeled = _es([[0, 0], [0, 1], [10, 10]], [0, 0, 1])
    unlabeled = _es([[0.2, 0.4], [9.5, 9.5], [0.1, 0.6], [10.2, 10.4]])
    res = clustering.semi_supervised_kmeans(
        labeled, unlabeled, 2, seed=0, update_forced_centroids=False
    )
    anchors = clustering.category_centroids(labeled).centroids
    # with frozen centroids the assignment is a single nearest-anchor pass
    d2 = ((unlabeled.features.astype(np.float64)[:, None, :] - anchors[None]) ** 2).sum(2)
    assert np.array_equal(res.labels[3:], d2.argmin(axis=1))
