"""Labeled-data selection strategies.

Three ways of deciding how much each labeled category should influence
training, all driven by its relation to the unlabeled target:

* greedy similar-selection: keep the ``budget`` categories with the
  smallest flow-weighted distance to the target (the transfer-learning
  baseline; known to be the wrong objective for discovery).
* binning: filter out categories farther than a within-target distance
  threshold, then keep the most distant of L rank chunks of survivors.
* beta soft weighting: weight = beta pdf of the rescaled cosine
  similarity, so both extremes of similarity are down-weighted.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import clustering, transport
from .data import EmbeddingSet, WeightAssignment
from .errors import (
    AllZeroWeightsError,
    InvalidParamError,
    NonFiniteValueError,
    ZeroNormError,
)
from ._util import worker_count

REDUCES = ("min", "median", "max")


@dataclass(frozen=True)
class BetaParams:
    alpha: float = 5.0
    beta: float = 5.0
    similarity_reduce: str = "min"
    # affine map from similarity in [-1, 1] to the pdf domain [0, 1]
    rescale: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidParamError("alpha and beta must be positive")
        if self.similarity_reduce not in REDUCES:
            raise InvalidParamError(f"reduce must be one of {REDUCES}")

    def rescaled(self, s):
        scale, offset = self.rescale
        return scale * np.asarray(s, dtype=np.float64) + offset


@dataclass(frozen=True)
class BinningParams:
    n_chunks: int = 2  # L
    n_splits: int = 10
    select_chunk: int | None = None  # 1-based; defaults to the last chunk
    seed: int = 0

    def __post_init__(self):
        if self.n_chunks < 2:
            raise InvalidParamError("need at least 2 chunks")
        if self.n_splits < 1:
            raise InvalidParamError("need at least 1 split")
        chunk = self.n_chunks if self.select_chunk is None else self.select_chunk
        if not 1 <= chunk <= self.n_chunks:
            raise InvalidParamError(f"select_chunk {chunk} outside 1..{self.n_chunks}")
        object.__setattr__(self, "select_chunk", chunk)


@dataclass
class SelectionResult:
    weights: WeightAssignment
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "weights": {str(c): w for c, w in sorted(self.weights.category_weights.items())},
            "diagnostics": _jsonable(self.diagnostics),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        payload = json.loads(text)
        weights = WeightAssignment({int(k): float(v) for k, v in payload["weights"].items()})
        return cls(weights, payload.get("diagnostics", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def beta_pdf(x: float, p: BetaParams) -> float:
    """Beta density x^(a-1) (1-x)^(b-1) / B(a, b), B via log-gamma.

    Defined on [0, 1]. With a shape parameter below 1 the density
    diverges at the matching endpoint; those points are clamped to 0
    with a warning so downstream weights stay finite.
    """
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise InvalidParamError(f"beta pdf input {x} outside [0, 1]")
    a, b = p.alpha, p.beta
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    if x == 0.0 or x == 1.0:
        exponent = a - 1.0 if x == 0.0 else b - 1.0
        if exponent > 0:
            return 0.0
        if exponent == 0:
            return math.exp(log_norm)  # the other factor is exactly 1 here
        warnings.warn(
            f"beta pdf diverges at x={x} for alpha={a}, beta={b}; clamping to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return math.exp(log_norm + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x))


def category_similarity(
    labeled_centroids: clustering.CentroidSet,
    target: EmbeddingSet,
    reduce: str = "min",
) -> np.ndarray:
    """Cosine similarity of each labeled centroid to the unlabeled data,
    reduced per category (min = the farthest unlabeled point)."""
    if reduce not in REDUCES:
        raise InvalidParamError(f"reduce must be one of {REDUCES}")
    cents = labeled_centroids.centroids
    feats = target.features.astype(np.float64)
    if cents.shape[1] != feats.shape[1]:
        raise InvalidParamError("centroid and target dims differ")
    c_norm = np.linalg.norm(cents, axis=1)
    f_norm = np.linalg.norm(feats, axis=1)
    if (c_norm == 0).any() or (f_norm == 0).any():
        raise ZeroNormError("cosine similarity undefined for zero-norm vectors")
    cos = (cents / c_norm[:, None]) @ (feats / f_norm[:, None]).T
    cos = np.clip(cos, -1.0, 1.0)
    if reduce == "min":
        return cos.min(axis=1)
    if reduce == "max":
        return cos.max(axis=1)
    return np.median(cos, axis=1)


def beta_weights(similarities, p: BetaParams) -> SelectionResult:
    """Per-category weights: beta pdf of the affinely rescaled similarity."""
    sims = np.asarray(similarities, dtype=np.float64)
    if not np.isfinite(sims).all():
        raise NonFiniteValueError("similarities must be finite")
    if (np.abs(sims) > 1 + 1e-9).any():
        raise InvalidParamError("similarities must lie in [-1, 1]")
    xs = np.clip(p.rescaled(np.clip(sims, -1, 1)), 0.0, 1.0)
    weights = {c: beta_pdf(x, p) for c, x in enumerate(xs)}
    return SelectionResult(
        WeightAssignment(weights),
        diagnostics={
            "method": "beta",
            "alpha": p.alpha,
            "beta": p.beta,
            "reduce": p.similarity_reduce,
            "similarity": {c: float(s) for c, s in enumerate(sims)},
            "pdf_input": {c: float(x) for c, x in enumerate(xs)},
        },
    )


def greedy_similar_selection(
    source_centroids: clustering.CentroidSet,
    target_centroids: clustering.CentroidSet,
    budget: int,
    metric: str = "euclidean",
) -> SelectionResult:
    """Transfer-learning style baseline: rank source categories by their
    flow-weighted distance to the target under the optimal transport plan
    and keep the closest ``budget`` of them with weight 1."""
    n = source_centroids.k
    if not 1 <= budget <= n:
        raise InvalidParamError(f"budget {budget} outside 1..{n}")
    cost = transport.pairwise_cost(source_centroids, target_centroids, metric)
    emd_value, flow = transport.solve_emd(
        cost,
        transport.MarginalWeights.from_counts(source_centroids.counts),
        transport.MarginalWeights.from_counts(target_centroids.counts),
    )
    dist = transport.per_source_distance(flow, cost)
    order = np.lexsort((np.arange(n), dist))  # ties broken by lower id
    selected = set(order[:budget].tolist())
    weights = {c: (1.0 if c in selected else 0.0) for c in range(n)}
    return SelectionResult(
        WeightAssignment(weights),
        diagnostics={
            "method": "greedy-similar",
            "budget": budget,
            "emd": emd_value,
            "distance": {c: float(d) for c, d in enumerate(dist)},
            "selected": sorted(selected),
            "target_centroids_origin": target_centroids.origin,
        },
    )


def binning_select(
    labeled: EmbeddingSet,
    unlabeled: EmbeddingSet,
    k_unlabeled: int,
    p: BinningParams,
    metric: str = "euclidean",
    max_iter: int = 300,
) -> SelectionResult:
    """Hard {0, 1} selection of labeled categories.

    The unlabeled data is clustered once with k-means. For each of
    n_splits random bisections of the cluster set into halves D0 / D1,
    the transport problem between (labeled categories + D0 clusters) and
    D1 clusters yields a per-source flow-weighted distance; the mean
    distance of the D0 clusters acts as a within-target threshold, and
    labeled categories beyond it are discarded for that split. Categories
    kept by a majority of splits are ranked by mean distance and cut into
    n_chunks equal chunks; only ``select_chunk`` (by default the most
    distant chunk) gets weight 1.
    """
    labeled.require_labels()
    if k_unlabeled < 2:
        raise InvalidParamError("need k_unlabeled >= 2 to bisect the cluster set")
    if k_unlabeled % 2 == 1:
        warnings.warn(
            "odd cluster count: the extra cluster goes to the threshold side",
            RuntimeWarning,
            stacklevel=2,
        )
    n_cat = labeled.n_categories
    lab_cents = clustering.category_centroids(labeled)
    km_cents, _ = clustering.kmeans(unlabeled, k_unlabeled, seed=p.seed, max_iter=max_iter)

    rng = np.random.default_rng(p.seed)
    perms = [rng.permutation(k_unlabeled) for _ in range(p.n_splits)]

    def one_split(perm):
        half = k_unlabeled // 2
        d0, d1 = perm[:half], perm[half:]
        src = np.vstack([lab_cents.centroids, km_cents.centroids[d0]])
        src_counts = np.concatenate([lab_cents.counts, km_cents.counts[d0]])
        cost = transport.pairwise_cost(src, km_cents.centroids[d1], metric)
        _, flow = transport.solve_emd(
            cost,
            transport.MarginalWeights.from_counts(src_counts),
            transport.MarginalWeights.from_counts(km_cents.counts[d1]),
        )
        dist = transport.per_source_distance(flow, cost)
        threshold = float(dist[n_cat:].mean())
        keep = dist[:n_cat] <= threshold
        return dist[:n_cat], threshold, keep

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_split, perms))
    else:
        results = [one_split(perm) for perm in perms]

    dists = np.array([r[0] for r in results])  # (splits, n_cat)
    thresholds = [r[1] for r in results]
    keeps = np.array([r[2] for r in results])  # (splits, n_cat)

    votes = keeps.sum(axis=0)
    kept = votes > p.n_splits / 2.0
    # per-category distance averaged over the splits that kept it; for
    # never-kept categories fall back to the all-split mean (diagnostics)
    mean_dist = np.where(
        kept,
        (dists * keeps).sum(axis=0) / np.maximum(keeps.sum(axis=0), 1),
        dists.mean(axis=0),
    )

    weights = {c: 0.0 for c in range(n_cat)}
    selected = []
    if kept.any():
        kept_ids = np.flatnonzero(kept)
        order = kept_ids[np.lexsort((kept_ids, mean_dist[kept_ids]))]
        chunks = _equal_chunks(order, p.n_chunks)
        selected = sorted(int(c) for c in chunks[p.select_chunk - 1])
        for c in selected:
            weights[c] = 1.0
    else:
        warnings.warn(
            "binning discarded every labeled category; source looks unrelated",
            RuntimeWarning,
            stacklevel=2,
        )

    return SelectionResult(
        WeightAssignment(weights),
        diagnostics={
            "method": "binning",
            "n_chunks": p.n_chunks,
            "n_splits": p.n_splits,
            "select_chunk": p.select_chunk,
            "threshold": float(np.mean(thresholds)),
            "thresholds": [float(t) for t in thresholds],
            "distance": {c: float(d) for c, d in enumerate(mean_dist)},
            "keep_votes": {c: int(v) for c, v in enumerate(votes)},
            "discarded": [int(c) for c in np.flatnonzero(~kept)],
            "selected": selected,
            "all_discarded": bool(not kept.any()),
        },
    )


def _equal_chunks(order, n_chunks):
    """Split ranked ids into n_chunks equal chunks, remainder to the last."""
    base = len(order) // n_chunks
    chunks = []
    for i in range(n_chunks):
        start = i * base
        end = start + base if i < n_chunks - 1 else len(order)
        chunks.append(order[start:end])
    return chunks


def harden_weights(w: WeightAssignment, threshold: float) -> WeightAssignment:
    """Threshold soft weights to {0, 1}."""
    if threshold < 0:
        raise InvalidParamError("threshold must be >= 0")
    return WeightAssignment(
        {c: (1.0 if v >= threshold else 0.0) for c, v in w.category_weights.items()}
    )


def resampling_distribution(w: WeightAssignment) -> np.ndarray:
    """Normalize category weights to sampling probabilities."""
    n = max(w.category_weights) + 1 if w.category_weights else 0
    vec = np.zeros(n)
    for c, v in w.category_weights.items():
        vec[c] = v
    total = vec.sum()
    if total <= 0:
        raise AllZeroWeightsError("cannot resample from all-zero weights")
    return vec / total
