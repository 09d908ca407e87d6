import itertools

import numpy as np
import pytest

from dsel import evaluation
from dsel.errors import InvalidParamError, ShapeMismatchError


def brute_force_matched(true, pred):
    """Exact best matched-count over all injective cluster-to-class maps."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    clusters = sorted(set(pred.tolist()))
    classes = sorted(set(true.tolist()))
    best = 0
    if len(clusters) <= len(classes):
        for mapping in itertools.permutations(classes, len(clusters)):
            m = dict(zip(clusters, mapping))
            best = max(best, sum(m[p] == t for p, t in zip(pred, true)))
    else:
        for mapping in itertools.permutations(clusters, len(classes)):
            m = {c: k for c, k in zip(mapping, classes)}
            best = max(best, sum(m.get(p) == t for p, t in zip(pred, true)))
    return best


def test_pure_relabel():
    true = [0, 0, 0, 1, 1]
    pred = [1, 1, 1, 0, 0]
    perm, matched = evaluation.hungarian_match(true, pred)
    assert perm == {1: 0, 0: 1}
    assert matched == 5
    assert evaluation.clustering_accuracy(true, pred) == 1.0


def test_partial_match_example():
    true = [0, 0, 1, 1, 2]
    pred = [0, 0, 0, 1, 1]
    perm, matched = evaluation.hungarian_match(true, pred)
    assert matched == 3
    assert matched == brute_force_matched(true, pred)
    assert perm[0] == 0
    assert perm[1] in (1, 2)


def test_hungarian_factorial_oracle():
    rng = np.random.default_rng(0)
    for trial in range(100):
        k_true = int(rng.integers(1, 7))
        k_pred = int(rng.integers(1, 7))
        n = int(rng.integers(5, 40))
        true = rng.integers(0, k_true, n)
        pred = rng.integers(0, k_pred, n)
        _, matched = evaluation.hungarian_match(true, pred)
        assert matched == brute_force_matched(true, pred)


def test_accuracy_identity_and_majority():
    labels = [0, 1, 2, 0, 1]
    assert evaluation.clustering_accuracy(labels, labels) == 1.0
    # one predicted cluster over classes of sizes 3 and 2
    assert evaluation.clustering_accuracy([0, 0, 0, 1, 1], [0, 0, 0, 0, 0]) == 0.6


def test_accuracy_invariant_to_relabeling():
    rng = np.random.default_rng(1)
    true = rng.integers(0, 4, 60)
    pred = rng.integers(0, 5, 60)
    base = evaluation.clustering_accuracy(true, pred)
    perm_t = rng.permutation(4)
    perm_p = rng.permutation(5)
    assert evaluation.clustering_accuracy(perm_t[true], pred) == base
    assert evaluation.clustering_accuracy(true, perm_p[pred]) == base
    assert evaluation.clustering_accuracy(perm_t[true], perm_p[pred]) == base


def test_split_all_old_perfect():
    true = [0, 1, 0, 1]
    report = evaluation.split_accuracy(true, true, old_category_set={0, 1})
    assert report.acc_all == 1.0
    assert report.acc_old == 1.0
    assert report.acc_new is None
    assert report.n_instances == {"all": 4, "old": 4, "new": 0}


def test_split_scrambled_new():
    # old class 0 perfectly predicted; new classes 1 and 2 collapsed into the
    # old cluster, so no new cluster is matched at all
    true = [0, 0, 0, 1, 1, 2, 2]
    pred = [0, 0, 0, 0, 0, 0, 0]
    report = evaluation.split_accuracy(true, pred, old_category_set={0})
    assert report.acc_old == 1.0
    assert report.acc_new == 0.0
    counts = report.error_counts
    assert counts["misclassified_as_old"] == 4
    assert counts["misclassified_as_new"] == 0
    assert counts["misclassified_as_old"] + counts["misclassified_as_new"] == 4


def test_taxonomy_destinations():
    # new instance landing in a cluster matched to an old class vs a cluster
    # matched to another new class
    true = [0, 0, 1, 1, 2, 2]
    pred = [0, 0, 1, 0, 1, 1]
    report = evaluation.split_accuracy(true, pred, old_category_set={0})
    # matching: cluster0 -> class0, cluster1 -> class2 (2 votes beat 1)
    assert report.permutation == {0: 0, 1: 2}
    # errors among new instances: one class-1 instance in cluster0 (old),
    # one class-1 instance in cluster1 (matched to new class 2)
    assert report.error_counts == {
        "misclassified_as_new": 1,
        "misclassified_as_old": 1,
    }


def test_taxonomy_counts_partition_errors():
    rng = np.random.default_rng(2)
    for trial in range(20):
        true = rng.integers(0, 5, 50)
        pred = rng.integers(0, 6, 50)
        old = {0, 1}
        report = evaluation.split_accuracy(true, pred, old_category_set=old)
        new_mask = ~np.isin(true, list(old))
        n_new = int(new_mask.sum())
        if report.acc_new is None:
            continue
        n_errors = round((1.0 - report.acc_new) * n_new)
        assert (
            report.error_counts["misclassified_as_new"]
            + report.error_counts["misclassified_as_old"]
            == n_errors
        )


def test_acc_all_is_count_weighted_average():
    rng = np.random.default_rng(3)
    true = rng.integers(0, 4, 80)
    pred = rng.integers(0, 4, 80)
    report = evaluation.split_accuracy(true, pred, old_category_set={0, 1})
    n_old = report.n_instances["old"]
    n_new = report.n_instances["new"]
    blended = (report.acc_old * n_old + report.acc_new * n_new) / (n_old + n_new)
    assert report.acc_all == pytest.approx(blended, abs=1e-12)


def test_split_accuracy_validations():
    with pytest.raises(InvalidParamError):
        evaluation.split_accuracy([0, 1], [0, 1], old_category_set={5})
    with pytest.raises(ShapeMismatchError):
        evaluation.split_accuracy([0, 1], [0, 1, 0], old_category_set={0})
    with pytest.raises(InvalidParamError):
        evaluation.hungarian_match([], [])


def test_report_json_and_csv():
    report = evaluation.split_accuracy(
        [0, 0, 1, 1, 2, 2], [0, 0, 1, 0, 1, 1], old_category_set={0}
    )
    again = evaluation.EvalReport.from_json(report.to_json())
    assert again.acc_all == report.acc_all
    assert again.permutation == report.permutation
    row = report.csv_row("simengine", "toy")
    fields = row.split(",")
    assert fields[0] == "simengine"
    assert fields[1] == "toy"
    assert len(fields) == len(evaluation.CSV_HEADER.split(","))
