"""Ground distances, exact Earth Mover's Distance, and domain similarity.

The EMD solver is a transportation simplex: northwest-corner starting
basis, tree-structured dual computation, and Bland's rule (lowest
row-major index) for both entering and leaving variables so degenerate
pivots cannot cycle. Problem sizes here are centroid sets, at most a few
thousand rows, so the dense O(N*M) pricing step is fine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    InfeasibleMarginalsError,
    InvalidParamError,
    ShapeMismatchError,
    ZeroNormError,
)

METRICS = ("euclidean", "cosine", "l2norm")

_MASS_TOL = 1e-8
_PRICE_TOL = 1e-12


@dataclass(frozen=True)
class CostMatrix:
    d: np.ndarray  # (n, m) non-negative ground distances
    metric: str = "euclidean"

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim != 2:
            raise ShapeMismatchError("cost matrix must be 2-D")
        if not np.isfinite(d).all() or (d < -1e-12).any():
            raise InvalidParamError("cost entries must be finite and >= 0")
        object.__setattr__(self, "d", np.maximum(d, 0.0))


@dataclass(frozen=True)
class MarginalWeights:
    mass: np.ndarray  # non-negative, sums to 1

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.ndim != 1 or mass.shape[0] < 1:
            raise InvalidParamError("marginals must be a 1-D vector")
        if (mass < 0).any() or not np.isfinite(mass).all():
            raise InfeasibleMarginalsError("marginal masses must be finite and >= 0")
        if abs(mass.sum() - 1.0) > _MASS_TOL:
            raise InfeasibleMarginalsError(f"marginals sum to {mass.sum()}, not 1")
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_counts(cls, counts) -> "MarginalWeights":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise InfeasibleMarginalsError("counts sum to zero")
        return cls(counts / total)

    @classmethod
    def uniform(cls, n: int) -> "MarginalWeights":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class FlowMatrix:
    k: np.ndarray  # (n, m) optimal flow, total mass 1
    source_marginals: np.ndarray
    target_marginals: np.ndarray
    # dual potentials from the final simplex basis, for optimality checks
    u: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def pairwise_cost(a, b, metric: str = "euclidean") -> CostMatrix:
    """Entry-wise ground distance between two centroid sets."""
    ca = np.asarray(getattr(a, "centroids", a), dtype=np.float64)
    cb = np.asarray(getattr(b, "centroids", b), dtype=np.float64)
    if ca.shape[1] != cb.shape[1]:
        raise ShapeMismatchError(f"dims differ: {ca.shape[1]} vs {cb.shape[1]}")
    if metric == "euclidean":
        d = cdist(ca, cb, "euclidean")
    elif metric == "cosine":
        _check_norms(ca, cb)
        sim = _unit(ca) @ _unit(cb).T
        d = 1.0 - np.clip(sim, -1.0, 1.0)
    elif metric == "l2norm":
        _check_norms(ca, cb)
        d = cdist(_unit(ca), _unit(cb), "euclidean")
    else:
        raise InvalidParamError(f"unknown metric {metric!r}; choose from {METRICS}")
    return CostMatrix(d, metric)


def _unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _check_norms(*mats):
    for m in mats:
        if (np.linalg.norm(m, axis=1) == 0).any():
            raise ZeroNormError("zero-norm centroid under a normalized metric")


def solve_emd(
    cost: CostMatrix, src: MarginalWeights, tgt: MarginalWeights
) -> tuple[float, FlowMatrix]:
    """Exact optimum of the transportation LP.

    Returns the normalized transport cost sum(k*d)/sum(k) (the
    denominator equals 1 under unit-mass marginals, asserted below) and
    the optimal flow with its dual potentials.
    """
    d = cost.d
    n, m = d.shape
    a = np.asarray(src.mass, dtype=np.float64)
    b = np.asarray(tgt.mass, dtype=np.float64)
    if a.shape[0] != n or b.shape[0] != m:
        raise ShapeMismatchError("marginal lengths do not match the cost matrix")
    if abs(a.sum() - b.sum()) > _MASS_TOL:
        raise InfeasibleMarginalsError("source and target mass differ")

    # solve in a canonical orientation so EMD(A, B) and EMD(B, A) run the
    # identical pivot sequence and return bitwise-equal values
    flipped = _should_flip(d, a, b)
    if flipped:
        d, a, b, n, m = d.T.copy(), b, a, m, n

    flow, basis = _northwest_corner(a, b)
    for _ in range(200 * (n + m) * max(n, m)):
        u, v = _tree_duals(d, basis, n, m)
        reduced = d - u[:, None] - v[None, :]
        reduced[basis] = 0.0
        neg = np.argwhere(reduced < -_PRICE_TOL)
        if len(neg) == 0:
            break
        enter = (int(neg[0][0]), int(neg[0][1]))  # Bland: lowest row-major index
        cycle = _find_cycle(basis, enter, n, m)
        minus = cycle[1::2]
        theta = min(flow[c] for c in minus)
        leave = min(c for c in minus if flow[c] <= theta + 0.0)
        for idx, cell in enumerate(cycle):
            flow[cell] += theta if idx % 2 == 0 else -theta
        flow[leave] = 0.0
        basis[leave] = False
        basis[enter] = True
    else:
        raise InvalidParamError("transportation simplex failed to converge")

    u, v = _tree_duals(d, basis, n, m)
    total = float(flow.sum())
    if abs(total - 1.0) > _MASS_TOL:
        raise InfeasibleMarginalsError(f"flow mass {total} differs from 1")
    value = float((flow * d).sum() / total)
    if flipped:
        flow, a, b, u, v = flow.T, b, a, v, u
    return value, FlowMatrix(np.ascontiguousarray(flow), a.copy(), b.copy(), u=u, v=v)


def _should_flip(d, a, b) -> bool:
    n, m = d.shape
    if n != m:
        return n > m
    fwd = np.concatenate([d.ravel(), a, b])
    rev = np.concatenate([d.T.ravel(), b, a])
    diff = np.flatnonzero(fwd != rev)
    if len(diff) == 0:
        return False
    return rev[diff[0]] < fwd[diff[0]]


def _northwest_corner(a, b):
    n, m = len(a), len(b)
    flow = np.zeros((n, m))
    basis = np.zeros((n, m), dtype=bool)
    rem_a = a.copy()
    rem_b = b.copy()
    i = j = 0
    while True:
        q = min(rem_a[i], rem_b[j])
        flow[i, j] = max(q, 0.0)
        basis[i, j] = True
        rem_a[i] -= q
        rem_b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if rem_a[i] <= 1e-15 and i < n - 1:
            i += 1
        else:
            j += 1
    return flow, basis


def _tree_duals(d, basis, n, m):
    """Solve u_i + v_j = d_ij over the spanning-tree basis, u_0 = 0."""
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    rows_of_col = [[] for _ in range(m)]
    cols_of_row = [[] for _ in range(n)]
    for i, j in np.argwhere(basis):
        cols_of_row[i].append(j)
        rows_of_col[j].append(i)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, idx = stack.pop()
        if kind == "r":
            for j in cols_of_row[idx]:
                if np.isnan(v[j]):
                    v[j] = d[idx, j] - u[idx]
                    stack.append(("c", j))
        else:
            for i in rows_of_col[idx]:
                if np.isnan(u[i]):
                    u[i] = d[i, idx] - v[idx]
                    stack.append(("r", i))
    # disconnected components can only appear on degenerate inputs; pin them
    u[np.isnan(u)] = 0.0
    for j in range(m):
        if np.isnan(v[j]):
            rows = rows_of_col[j]
            v[j] = d[rows[0], j] - u[rows[0]] if rows else 0.0
    return u, v


def _find_cycle(basis, enter, n, m):
    """Unique alternating cycle created by adding `enter` to the basis tree.

    Returns cells starting at `enter` with signs +, -, +, ... along the
    cycle (odd positions lose flow).
    """
    start_row, start_col = enter
    rows_of_col = [[] for _ in range(m)]
    cols_of_row = [[] for _ in range(n)]
    for i, j in np.argwhere(basis):
        cols_of_row[i].append(j)
        rows_of_col[j].append(i)
    # path from row node start_row to col node start_col through basis edges
    parent = {}
    seen = {("r", start_row)}
    queue = [("r", start_row)]
    goal = ("c", start_col)
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        kind, idx = node
        neighbors = (
            [("c", j) for j in cols_of_row[idx]]
            if kind == "r"
            else [("r", i) for i in rows_of_col[idx]]
        )
        for nxt in neighbors:
            if nxt not in seen:
                seen.add(nxt)
                parent[nxt] = node
                queue.append(nxt)
    path = [goal]
    while path[-1] != ("r", start_row):
        path.append(parent[path[-1]])
    path.reverse()  # r(start_row), c(...), r(...), ..., c(start_col)
    cells = [enter]
    for a, b in zip(path, path[1:]):
        (ka, ia), (kb, ib) = a, b
        cells.append((ia, ib) if ka == "r" else (ib, ia))
    return cells


def domain_similarity(emd_value: float, gamma: float = 1.0) -> float:
    """exp(-gamma * emd): 1 at distance zero, monotonically decreasing."""
    if emd_value < 0:
        raise InvalidParamError(f"emd_value must be >= 0, got {emd_value}")
    if gamma <= 0:
        raise InvalidParamError(f"gamma must be > 0, got {gamma}")
    return float(np.exp(-gamma * emd_value))


def per_source_distance(flow: FlowMatrix, cost: CostMatrix) -> np.ndarray:
    """Flow-weighted mean ground distance of each source row to the target.

    Rows that carry no flow mass get +inf and trigger a warning.
    """
    k = flow.k
    if k.shape != cost.d.shape:
        raise ShapeMismatchError(f"flow {k.shape} vs cost {cost.d.shape}")
    row_mass = k.sum(axis=1)
    out = np.full(k.shape[0], np.inf)
    ok = row_mass > 1e-15
    out[ok] = (k[ok] * cost.d[ok]).sum(axis=1) / row_mass[ok]
    if not ok.all():
        warnings.warn(
            f"{(~ok).sum()} source rows carry no flow; their distance is +inf",
            RuntimeWarning,
            stacklevel=2,
        )
    return out
