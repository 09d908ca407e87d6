import numpy as np
import pytest

from dsel import data
from dsel.errors import (
    DimensionMismatchError,
    LabelRangeError,
    MalformedHeaderError,
    MissingWeightError,
    NonFiniteValueError,
    UnlabeledInputError,
)


def test_csv_parse_three_rows(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("dim0,dim1,label\n1,2,0\n3,4,0\n5,6,1\n")
    es = data.load_embeddings(p, "csv")
    assert es.n_instances == 3
    assert es.dim == 2
    assert es.n_categories == 2
    assert list(es.labels) == [0, 0, 1]


def test_binary_truncated_row(tmp_path):
    es = data.EmbeddingSet(np.arange(8, dtype=np.float32).reshape(2, 4))
    p = tmp_path / "t.dsel"
    data.save_embeddings(es, p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-4])  # drop one float from the last row
    with pytest.raises(DimensionMismatchError):
        data.load_embeddings(p)


@pytest.mark.parametrize("fmt,ext", [("binary", "dsel"), ("csv", "csv")])
def test_round_trip_bit_identical(tmp_path, fmt, ext):
    rng = np.random.default_rng(0)
    es = data.EmbeddingSet(
        rng.standard_normal((10, 8)).astype(np.float32),
        rng.integers(0, 3, 10) if fmt == "binary" else None,
    )
    if fmt == "binary" and es.labels is not None:
        # keep labels dense
        es = data.EmbeddingSet(es.features, np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0]))
    p = tmp_path / f"rt.{ext}"
    data.save_embeddings(es, p, fmt)
    back = data.load_embeddings(p, fmt)
    assert back.features.tobytes() == es.features.tobytes()
    if es.labels is not None:
        assert np.array_equal(back.labels, es.labels)


def test_csv_round_trip_with_labels(tmp_path):
    rng = np.random.default_rng(3)
    es = data.EmbeddingSet(
        (rng.standard_normal((12, 5)) * 100).astype(np.float32),
        np.repeat([0, 1, 2], 4),
    )
    p = tmp_path / "rt.csv"
    data.save_embeddings(es, p)
    back = data.load_embeddings(p)
    assert back.features.tobytes() == es.features.tobytes()
    assert np.array_equal(back.labels, es.labels)


def test_bad_header_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x0,x1\n1,2\n")
    with pytest.raises(MalformedHeaderError):
        data.load_embeddings(p)
    q = tmp_path / "bad.dsel"
    q.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(MalformedHeaderError):
        data.load_embeddings(q)


def test_non_finite_rejected(tmp_path):
    p = tmp_path / "nan.csv"
    p.write_text("dim0,dim1\n1,nan\n")
    with pytest.raises(NonFiniteValueError):
        data.load_embeddings(p)
    with pytest.raises(NonFiniteValueError):
        data.EmbeddingSet(np.array([[1.0, np.inf]]))


def test_label_density_and_range():
    feats = np.zeros((3, 2), dtype=np.float32)
    with pytest.raises(LabelRangeError):
        data.EmbeddingSet(feats, np.array([0, 0, 2]))  # id 1 missing
    with pytest.raises(LabelRangeError):
        data.EmbeddingSet(feats, np.array([0, -1, 1]))


def test_merge_two_sets_reindexes():
    a = data.EmbeddingSet(np.zeros((3, 2), np.float32), [0, 1, 2], source_tag="a")
    b = data.EmbeddingSet(np.ones((2, 2), np.float32), [0, 1], source_tag="b")
    merged = data.merge_sources([a, b])
    assert merged.n_categories == 5
    assert list(merged.labels) == [0, 1, 2, 3, 4]
    assert merged.category_names[3].startswith("b/")


def test_merge_single_set_identity():
    a = data.EmbeddingSet(np.zeros((3, 2), np.float32), [0, 0, 1], source_tag="a")
    merged = data.merge_sources([a])
    assert np.array_equal(merged.features, a.features)
    assert np.array_equal(merged.labels, a.labels)


def test_merge_counting_oracle():
    rng = np.random.default_rng(1)
    sizes = [10, 20, 30]
    sets = []
    for i, n in enumerate(sizes):
        labels = np.arange(n) % (i + 2)
        sets.append(
            data.EmbeddingSet(
                rng.standard_normal((n, 4)).astype(np.float32),
                np.sort(labels),
                source_tag=f"s{i}",
            )
        )
    merged = data.merge_sources(sets)
    assert merged.n_instances == 60
    # per-instance provenance recovered through the name prefix
    prefixes = [merged.category_names[c].split("/")[0] for c in merged.labels]
    counts = {tag: prefixes.count(tag) for tag in ("s0", "s1", "s2")}
    assert counts == {"s0": 10, "s1": 20, "s2": 30}
    # per-category counts preserved
    for s, offset in zip(sets, [0, 2, 5]):
        for c in range(s.n_categories):
            assert merged.category_counts()[offset + c] == s.category_counts()[c]


def test_merge_rejects_unlabeled_and_dim_mismatch():
    a = data.EmbeddingSet(np.zeros((2, 2), np.float32), [0, 1])
    with pytest.raises(UnlabeledInputError):
        data.merge_sources([a, data.EmbeddingSet(np.zeros((2, 2), np.float32))])
    with pytest.raises(DimensionMismatchError):
        data.merge_sources([a, data.EmbeddingSet(np.zeros((2, 3), np.float32), [0, 1])])


def test_instance_weights_lookup():
    d = data.EmbeddingSet(np.zeros((3, 1), np.float32), [0, 1, 0])
    w = data.WeightAssignment({0: 2.0, 1: 0.0})
    assert list(data.instance_weights(w, d)) == [2.0, 0.0, 2.0]


def test_instance_weights_all_ones_default():
    d = data.EmbeddingSet(np.zeros((4, 1), np.float32), [0, 1, 2, 0])
    w = data.WeightAssignment.all_ones(3)
    assert list(w.per_instance(d)) == [1.0, 1.0, 1.0, 1.0]


def test_instance_weights_missing_entry():
    d = data.EmbeddingSet(np.zeros((2, 1), np.float32), [0, 1])
    w = data.WeightAssignment({0: 1.0})
    with pytest.raises(MissingWeightError):
        data.instance_weights(w, d)
    assert list(data.instance_weights(w, d, default_missing=True)) == [1.0, 1.0]


def test_weights_normalize_for_resampling():
    w = data.WeightAssignment({0: 2.0, 1: 1.0, 2: 1.0})
    total = sum(w.category_weights.values())
    probs = {c: v / total for c, v in w.category_weights.items()}
    assert probs == {0: 0.5, 1: 0.25, 2: 0.25}


def test_weights_constant_per_category_property():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 5, 40)
    labels[:5] = np.arange(5)  # density
    d = data.EmbeddingSet(rng.standard_normal((40, 3)).astype(np.float32), labels)
    w = data.WeightAssignment({c: float(rng.uniform(0, 3)) for c in range(5)})
    vec = data.instance_weights(w, d)
    for c in range(5):
        vals = vec[d.labels == c]
        assert (vals == vals[0]).all()


def test_weight_json_round_trip():
    w = data.WeightAssignment({0: 1.5, 3: 0.0, 2: 2.25, 1: 1.0})
    again = data.WeightAssignment.from_json(w.to_json())
    assert again.category_weights == w.category_weights
