"""k-means machinery: per-category means, Lloyd iterations with k-means++
seeding, and the semi-supervised variant that pins labeled instances to
their ground-truth clusters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingSet
from .errors import InvalidParamError

ORIGIN_LABELED = "labeled-categories"
ORIGIN_CLUSTERS = "unlabeled-clusters"


@dataclass(frozen=True)
class CentroidSet:
    centroids: np.ndarray  # (k, dim) float64
    counts: np.ndarray  # (k,) int64, members per centroid
    origin: str = ORIGIN_CLUSTERS

    def __post_init__(self):
        cents = np.asarray(self.centroids, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if cents.ndim != 2 or cents.shape[0] < 1:
            raise InvalidParamError(f"bad centroid matrix shape {cents.shape}")
        if counts.shape != (cents.shape[0],) or (counts < 1).any():
            raise InvalidParamError("each centroid needs a positive member count")
        object.__setattr__(self, "centroids", cents)
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (n,) int32 cluster id per instance
    inertia: float  # sum of squared distances to assigned centroids
    n_iter: int
    inertia_history: list = field(default_factory=list)
    label_history: list = field(default_factory=list)  # filled when recording


def category_centroids(d: EmbeddingSet) -> CentroidSet:
    """One centroid per category id: the mean feature vector of its members."""
    d.require_labels()
    feats = d.features.astype(np.float64)
    k = d.n_categories
    sums = np.zeros((k, feats.shape[1]))
    np.add.at(sums, d.labels, feats)
    counts = d.category_counts()
    return CentroidSet(sums / counts[:, None], counts, origin=ORIGIN_LABELED)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (n, k) squared euclidean distances, clipped against round-off
    d2 = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    return np.maximum(d2, 0.0)


def kmeans_pp_init(d: EmbeddingSet, k: int, seed: int) -> CentroidSet:
    """Standard D^2 seeding: first centroid uniform, then proportional to
    the squared distance to the nearest chosen centroid."""
    x = d.features.astype(np.float64)
    _check_k(k, d.n_instances)
    rng = np.random.default_rng(seed)
    picked = _pp_chain(x, k, rng, existing=None)
    return CentroidSet(picked, np.ones(k, dtype=np.int64), origin=ORIGIN_CLUSTERS)


def _pp_chain(x: np.ndarray, n_new: int, rng, existing: np.ndarray | None) -> np.ndarray:
    n = x.shape[0]
    chosen = []
    if existing is None or existing.shape[0] == 0:
        first = int(rng.integers(n))
        chosen.append(x[first])
        d2 = ((x - x[first]) ** 2).sum(axis=1)
        n_new -= 1
    else:
        d2 = _sq_dists(x, existing).min(axis=1)
    for _ in range(n_new):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = int(rng.choice(n, p=probs))
        else:
            idx = int(rng.integers(n))
        chosen.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(chosen)


def kmeans(
    d: EmbeddingSet, k: int, seed: int, max_iter: int = 300
) -> tuple[CentroidSet, ClusterAssignment]:
    """Lloyd iterations from k-means++ init until the assignment is a
    fixpoint or max_iter is hit; deterministic for a fixed seed.

    Empty clusters are repaired by reseeding them to the point farthest
    from its currently assigned centroid, which keeps k fixed without
    increasing the inertia.
    """
    x = d.features.astype(np.float64)
    _check_k(k, d.n_instances)
    cents = kmeans_pp_init(d, k, seed).centroids.copy()
    assign = np.full(d.n_instances, -1, dtype=np.int32)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(x, cents)
        new_assign = d2.argmin(axis=1).astype(np.int32)
        new_assign = _repair_empty(x, cents, new_assign, k)
        history.append(float(_sq_dists_rows(x, cents, new_assign).sum()))
        if (new_assign == assign).all():
            assign = new_assign
            break
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if len(members):
                cents[c] = members.mean(axis=0)
    inertia = float(_sq_dists_rows(x, cents, assign).sum())
    history.append(inertia)
    return (
        CentroidSet(cents, np.bincount(assign, minlength=k), origin=ORIGIN_CLUSTERS),
        ClusterAssignment(assign, inertia, n_iter, inertia_history=history),
    )


def _sq_dists_rows(x, cents, assign):
    return ((x - cents[assign]) ** 2).sum(axis=1)


def _repair_empty(x, cents, assign, k):
    counts = np.bincount(assign, minlength=k)
    taken = set()
    for c in np.flatnonzero(counts == 0):
        dist = _sq_dists_rows(x, cents, assign)
        for idx in taken:
            dist[idx] = -1.0
        far = int(dist.argmax())
        cents[c] = x[far]
        assign[far] = c
        taken.add(far)
    return assign


def semi_supervised_kmeans(
    labeled: EmbeddingSet,
    unlabeled: EmbeddingSet,
    k: int,
    seed: int,
    max_iter: int = 300,
    *,
    update_forced_centroids: bool = True,
    record_history: bool = False,
) -> ClusterAssignment:
    """k-means over the union of both sets with labeled instances pinned to
    the cluster of their ground-truth category.

    The first n_categories centroids start at the labeled category means;
    the rest are k-means++ seeded from the unlabeled data. Centroid
    updates include labeled members unless ``update_forced_centroids`` is
    False, in which case the forced centroids stay at the category means.
    Returns assignments over labeled rows first, then unlabeled rows.
    """
    labeled.require_labels()
    if labeled.dim != unlabeled.dim:
        raise InvalidParamError("labeled and unlabeled dims differ")
    n_cat = labeled.n_categories
    if k < n_cat:
        raise InvalidParamError(f"k={k} < {n_cat} labeled categories")
    _check_k(k, labeled.n_instances + unlabeled.n_instances)

    xl = labeled.features.astype(np.float64)
    xu = unlabeled.features.astype(np.float64)
    forced = labeled.labels.astype(np.int32)
    rng = np.random.default_rng(seed)

    anchors = category_centroids(labeled).centroids
    cents = anchors.copy()
    if k > n_cat:
        extra = _pp_chain(xu, k - n_cat, rng, existing=cents)
        cents = np.vstack([cents, extra])

    assign_u = np.full(unlabeled.n_instances, -1, dtype=np.int32)
    history, label_history = [], []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(xu, cents)
        new_u = d2.argmin(axis=1).astype(np.int32)
        full = np.concatenate([forced, new_u])
        if record_history:
            label_history.append(full.copy())
        history.append(float(_inertia(xl, xu, cents, forced, new_u)))
        if (new_u == assign_u).all():
            assign_u = new_u
            break
        assign_u = new_u
        x_all = np.vstack([xl, xu])
        all_assign = np.concatenate([forced, assign_u])
        start = 0 if update_forced_centroids else n_cat
        for c in range(start, k):
            members = x_all[all_assign == c]
            if len(members):
                cents[c] = members.mean(axis=0)
            elif c >= n_cat and len(xu):
                # empty free cluster: reseed to the unlabeled point farthest
                # from its assigned centroid
                far = int(_sq_dists_rows(xu, cents, assign_u).argmax())
                cents[c] = xu[far]
                assign_u[far] = c
    inertia = float(_inertia(xl, xu, cents, forced, assign_u))
    return ClusterAssignment(
        np.concatenate([forced, assign_u]),
        inertia,
        n_iter,
        inertia_history=history,
        label_history=label_history,
    )


def _inertia(xl, xu, cents, forced, assign_u):
    v = _sq_dists_rows(xl, cents, forced).sum()
    if len(assign_u):
        v += _sq_dists_rows(xu, cents, assign_u).sum()
    return v


def _check_k(k: int, n: int):
    if k <= 0:
        raise InvalidParamError(f"k must be positive, got {k}")
    if k > n:
        raise InvalidParamError(f"k={k} exceeds n_instances={n}")
