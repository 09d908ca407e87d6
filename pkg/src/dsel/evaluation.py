"""Clustering-accuracy evaluation.

Predicted cluster ids are matched to true class ids by a single global
maximum-weight assignment on the contingency table; All/Old/New
accuracies are that one matching restricted to the respective instances
(per-split re-matching would inflate the split scores). Erroneous
instances from novel classes are split into "misclassified as old"
versus "misclassified as new" by whether their predicted cluster was
matched to an old class; unmatched clusters count as new.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidParamError, ShapeMismatchError


@dataclass
class EvalReport:
    acc_all: float
    acc_old: float | None
    acc_new: float | None
    permutation: dict[int, int]  # predicted cluster -> matched true class
    error_counts: dict[str, int] = field(default_factory=dict)
    n_instances: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "acc_all": self.acc_all,
            "acc_old": self.acc_old,
            "acc_new": self.acc_new,
            "permutation": {str(k): v for k, v in sorted(self.permutation.items())},
            "error_counts": self.error_counts,
            "n_instances": self.n_instances,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        p = json.loads(text)
        return cls(
            acc_all=p["acc_all"],
            acc_old=p["acc_old"],
            acc_new=p["acc_new"],
            permutation={int(k): int(v) for k, v in p["permutation"].items()},
            error_counts={k: int(v) for k, v in p["error_counts"].items()},
            n_instances={k: int(v) for k, v in p["n_instances"].items()},
        )

    def csv_row(self, method: str, dataset: str) -> str:
        def fmt(x):
            return "" if x is None else "%.4f" % x

        return ",".join(
            [
                method,
                dataset,
                fmt(self.acc_all),
                fmt(self.acc_old),
                fmt(self.acc_new),
                str(self.error_counts.get("misclassified_as_new", 0)),
                str(self.error_counts.get("misclassified_as_old", 0)),
            ]
        )


CSV_HEADER = "method,dataset,acc_all,acc_old,acc_new,err_as_new,err_as_old"


def _as_labels(x, name) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidParamError(f"{name} must be a non-empty 1-D label vector")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InvalidParamError(f"{name} must contain integers")
    if arr.min() < 0:
        raise InvalidParamError(f"{name} contains negative labels")
    return arr.astype(np.int64)


def contingency(true_labels, predicted_labels) -> np.ndarray:
    """(n_clusters, n_classes) co-occurrence counts."""
    t = _as_labels(true_labels, "true_labels")
    p = _as_labels(predicted_labels, "predicted_labels")
    if t.shape != p.shape:
        raise ShapeMismatchError("label vectors differ in length")
    n_pred = int(p.max()) + 1
    n_true = int(t.max()) + 1
    table = np.zeros((n_pred, n_true), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def hungarian_match(true_labels, predicted_labels) -> tuple[dict[int, int], int]:
    """Optimal predicted-cluster to true-class matching.

    Runs maximum-weight assignment on the zero-padded square contingency
    table. Pairs with zero co-occurrence are dropped from the returned
    permutation (those clusters are effectively unmatched).
    """
    table = contingency(true_labels, predicted_labels)
    n_pred, n_true = table.shape
    size = max(n_pred, n_true)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:n_pred, :n_true] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    perm = {}
    matched = 0
    for r, c in zip(rows, cols):
        if r < n_pred and c < n_true and padded[r, c] > 0:
            perm[int(r)] = int(c)
            matched += int(padded[r, c])
    return perm, matched


def clustering_accuracy(true_labels, predicted_labels) -> float:
    """Fraction of instances correct under the optimal matching."""
    _, matched = hungarian_match(true_labels, predicted_labels)
    return matched / len(np.asarray(true_labels))


def error_taxonomy(true_labels, predicted_labels, permutation, old_category_set) -> dict:
    """Counts of erroneous novel-class instances by destination type."""
    t = _as_labels(true_labels, "true_labels")
    p = _as_labels(predicted_labels, "predicted_labels")
    old = set(int(c) for c in old_category_set)
    as_new = as_old = 0
    for ti, pi in zip(t, p):
        if int(ti) in old:
            continue
        matched = permutation.get(int(pi))
        if matched == int(ti):
            continue  # correct
        if matched is not None and matched in old:
            as_old += 1
        else:
            as_new += 1
    return {"misclassified_as_new": as_new, "misclassified_as_old": as_old}


def split_accuracy(true_labels, predicted_labels, old_category_set) -> EvalReport:
    """All/Old/New accuracy under one global matching, plus the taxonomy.

    Empty splits report None rather than 0.
    """
    t = _as_labels(true_labels, "true_labels")
    p = _as_labels(predicted_labels, "predicted_labels")
    if t.shape != p.shape:
        raise ShapeMismatchError("label vectors differ in length")
    old = set(int(c) for c in old_category_set)
    observed = set(int(c) for c in np.unique(t))
    if not old <= observed:
        raise InvalidParamError("old_category_set contains unobserved classes")

    perm, matched = hungarian_match(t, p)
    mapped = np.array([perm.get(int(pi), -1) for pi in p])
    correct = mapped == t

    old_mask = np.array([int(ti) in old for ti in t])
    new_mask = ~old_mask

    def split_acc(mask):
        return float(correct[mask].mean()) if mask.any() else None

    counts = error_taxonomy(t, p, perm, old)
    return EvalReport(
        acc_all=float(correct.mean()),
        acc_old=split_acc(old_mask),
        acc_new=split_acc(new_mask),
        permutation=perm,
        error_counts=counts,
        n_instances={
            "all": int(len(t)),
            "old": int(old_mask.sum()),
            "new": int(new_mask.sum()),
        },
    )
