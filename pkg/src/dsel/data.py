"""Core data types and on-disk formats.

An :class:`EmbeddingSet` is a dense instance-by-dimension feature matrix
with optional per-instance category labels; every other module consumes
these. A :class:`WeightAssignment` maps category ids to non-negative
weights, broadcast to instances via :func:`instance_weights`.

On-disk formats:

* binary (``.dsel``): magic ``DSEL``, u32 version=1, u32 n, u32 dim,
  u8 has_labels, n*dim little-endian float32 row-major, then n u32
  labels when has_labels is set.
* CSV: header ``dim0,...,dim{D-1}[,label]``, one row per instance,
  values written with 9 significant digits (round-trips float32).
* weight file: JSON object mapping category-id string to a number.
"""

from __future__ import annotations

import enum
import json
import re
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidParamError,
    LabelRangeError,
    MalformedDataError,
    MalformedHeaderError,
    MissingWeightError,
    NonFiniteValueError,
    UnlabeledInputError,
)

MAGIC = b"DSEL"
FORMAT_VERSION = 1


class HierarchyTier(str, enum.Enum):
    """Similarity tier of a synthetic source pool relative to the target."""

    SIMILAR = "similar"
    MEDIUM = "medium"
    DISSIMILAR = "dissimilar"
    OOD = "ood"


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable feature matrix with optional dense 0-based labels."""

    features: np.ndarray
    labels: np.ndarray | None = None
    category_names: list[str] | None = None
    source_tag: str | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise MalformedDataError(f"features must be 2-D, got ndim={feats.ndim}")
        if feats.shape[0] < 1 or feats.shape[1] < 1:
            raise MalformedDataError(f"empty feature matrix {feats.shape}")
        if not np.isfinite(feats).all():
            raise NonFiniteValueError("features contain non-finite values")
        feats = np.ascontiguousarray(feats)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (feats.shape[0],):
                raise LabelRangeError(
                    f"labels shape {labels.shape} does not match n={feats.shape[0]}"
                )
            if not np.issubdtype(labels.dtype, np.integer):
                if not np.all(labels == labels.astype(np.int64)):
                    raise LabelRangeError("labels must be integers")
            labels = labels.astype(np.int32)
            if labels.min() < 0:
                raise LabelRangeError("labels must be >= 0")
            n_cat = int(labels.max()) + 1
            present = np.bincount(labels, minlength=n_cat)
            if (present == 0).any():
                missing = int(np.flatnonzero(present == 0)[0])
                raise LabelRangeError(f"category id {missing} has no instances")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
            if self.category_names is not None and len(self.category_names) != n_cat:
                raise LabelRangeError(
                    f"{len(self.category_names)} names for {n_cat} categories"
                )
        elif self.category_names is not None:
            raise InvalidParamError("category_names given without labels")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_categories(self) -> int:
        self.require_labels()
        return int(self.labels.max()) + 1

    def category_counts(self) -> np.ndarray:
        self.require_labels()
        return np.bincount(self.labels, minlength=self.n_categories)

    def require_labels(self):
        if self.labels is None:
            raise UnlabeledInputError("operation requires a labeled EmbeddingSet")

    def without_labels(self) -> "EmbeddingSet":
        return EmbeddingSet(self.features, source_tag=self.source_tag)


@dataclass(frozen=True)
class WeightAssignment:
    """Per-category weights; all instances of a category share one weight."""

    category_weights: dict[int, float]

    def __post_init__(self):
        cleaned = {}
        for cat, w in self.category_weights.items():
            w = float(w)
            if not np.isfinite(w) or w < 0:
                raise InvalidParamError(f"weight for category {cat} is {w}")
            cleaned[int(cat)] = w
        object.__setattr__(self, "category_weights", cleaned)

    @classmethod
    def all_ones(cls, n_categories: int) -> "WeightAssignment":
        return cls({c: 1.0 for c in range(n_categories)})

    def per_instance(self, dataset: EmbeddingSet, *, default_missing: bool = False) -> np.ndarray:
        return instance_weights(self, dataset, default_missing=default_missing)

    def to_json(self) -> str:
        return json.dumps(
            {str(c): w for c, w in sorted(self.category_weights.items())},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "WeightAssignment":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedDataError(f"weight file is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise MalformedDataError("weight file must be a JSON object")
        try:
            return cls({int(k): float(v) for k, v in raw.items()})
        except (TypeError, ValueError) as exc:
            raise MalformedDataError(f"bad weight entry: {exc}") from exc


def instance_weights(
    w: WeightAssignment, d: EmbeddingSet, *, default_missing: bool = False
) -> np.ndarray:
    """Broadcast category weights to instances: out[i] = w[label(i)].

    Missing categories raise unless ``default_missing`` opts into a
    silent default of 1.
    """
    d.require_labels()
    out = np.empty(d.n_instances, dtype=np.float64)
    table = np.full(d.n_categories, np.nan)
    for cat, weight in w.category_weights.items():
        if 0 <= cat < d.n_categories:
            table[cat] = weight
    missing = np.isnan(table)
    if missing.any():
        if not default_missing:
            raise MissingWeightError(
                f"no weight for category {int(np.flatnonzero(missing)[0])}"
            )
        table[missing] = 1.0
    out[:] = table[d.labels]
    return out


def merge_sources(sets: list[EmbeddingSet]) -> EmbeddingSet:
    """Concatenate labeled sets, re-indexing categories to one dense range.

    Provenance is kept by prefixing category names with each set's
    source tag (``tag/name``).
    """
    if not sets:
        raise InvalidParamError("merge_sources needs at least one set")
    dim = sets[0].dim
    feats, labels, names, tags = [], [], [], []
    offset = 0
    for i, s in enumerate(sets):
        s.require_labels()
        if s.dim != dim:
            raise DimensionMismatchError(f"set {i} has dim {s.dim}, expected {dim}")
        tag = s.source_tag or f"src{i}"
        tags.append(tag)
        feats.append(s.features)
        labels.append(s.labels.astype(np.int64) + offset)
        local_names = s.category_names or [f"cat{c}" for c in range(s.n_categories)]
        names.extend(f"{tag}/{name}" for name in local_names)
        offset += s.n_categories
    return EmbeddingSet(
        np.vstack(feats),
        np.concatenate(labels),
        category_names=names,
        source_tag="+".join(tags),
    )


def save_embeddings(es: EmbeddingSet, path, format: str | None = None):
    fmt = _resolve_format(path, format)
    if fmt == "binary":
        _save_binary(es, path)
    else:
        _save_csv(es, path)


def load_embeddings(path, format: str | None = None) -> EmbeddingSet:
    fmt = _resolve_format(path, format)
    if fmt == "binary":
        return _load_binary(path)
    return _load_csv(path)


def _resolve_format(path, format: str | None) -> str:
    if format is not None:
        if format not in ("binary", "csv"):
            raise InvalidParamError(f"unknown format {format!r}")
        return format
    text = str(path)
    if text.endswith(".csv"):
        return "csv"
    return "binary"


def _save_binary(es: EmbeddingSet, path):
    has_labels = es.labels is not None
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIIB", FORMAT_VERSION, es.n_instances, es.dim, int(has_labels)))
        f.write(es.features.astype("<f4").tobytes())
        if has_labels:
            f.write(es.labels.astype("<u4").tobytes())


def _load_binary(path) -> EmbeddingSet:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 17 or blob[:4] != MAGIC:
        raise MalformedHeaderError(f"{path}: missing DSEL magic")
    version, n, dim, has_labels = struct.unpack("<IIIB", blob[4:17])
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if dim < 1 or n < 1:
        raise MalformedHeaderError(f"{path}: bad header n={n} dim={dim}")
    if has_labels not in (0, 1):
        raise MalformedHeaderError(f"{path}: bad has_labels byte {has_labels}")
    offset = 17
    nbytes = 4 * n * dim
    if len(blob) < offset + nbytes:
        have = (len(blob) - offset) // 4
        raise DimensionMismatchError(
            f"{path}: expected {n}x{dim} floats, found only {have} values"
        )
    feats = np.frombuffer(blob[offset : offset + nbytes], dtype="<f4").reshape(n, dim)
    offset += nbytes
    labels = None
    if has_labels:
        if len(blob) < offset + 4 * n:
            raise MalformedDataError(f"{path}: truncated label block")
        raw = np.frombuffer(blob[offset : offset + 4 * n], dtype="<u4")
        if raw.max(initial=0) > np.iinfo(np.int32).max:
            raise LabelRangeError(f"{path}: label value out of range")
        labels = raw.astype(np.int32)
        offset += 4 * n
    if offset != len(blob):
        raise MalformedDataError(f"{path}: {len(blob) - offset} trailing bytes")
    if not np.isfinite(feats).all():
        raise NonFiniteValueError(f"{path}: non-finite feature value")
    return EmbeddingSet(feats, labels)


_CSV_HEADER = re.compile(r"^dim0(,dim\d+)*(,label)?$")


def _save_csv(es: EmbeddingSet, path):
    has_labels = es.labels is not None
    cols = [f"dim{i}" for i in range(es.dim)] + (["label"] if has_labels else [])
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for i in range(es.n_instances):
            row = ["%.9g" % float(v) for v in es.features[i]]
            if has_labels:
                row.append(str(int(es.labels[i])))
            f.write(",".join(row) + "\n")


def _load_csv(path) -> EmbeddingSet:
    with open(path, "r") as f:
        lines = [line.rstrip("\n") for line in f]
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise MalformedHeaderError(f"{path}: empty file")
    header = lines[0].strip()
    if not _CSV_HEADER.match(header):
        raise MalformedHeaderError(f"{path}: bad header {header!r}")
    cols = header.split(",")
    has_labels = cols[-1] == "label"
    dim = len(cols) - int(has_labels)
    expected = [f"dim{i}" for i in range(dim)]
    if cols[:dim] != expected:
        raise MalformedHeaderError(f"{path}: dimension columns must be dim0..dim{dim - 1}")
    if not lines[1:]:
        raise MalformedDataError(f"{path}: no data rows")
    feats = np.empty((len(lines) - 1, dim), dtype=np.float32)
    labels = np.empty(len(lines) - 1, dtype=np.int32) if has_labels else None
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != len(cols):
            raise DimensionMismatchError(
                f"{path}: row {r + 1} has {len(cells)} values, expected {len(cols)}"
            )
        try:
            feats[r] = [float(c) for c in cells[:dim]]
        except ValueError as exc:
            raise MalformedDataError(f"{path}: row {r + 1}: {exc}") from exc
        if has_labels:
            try:
                labels[r] = int(cells[-1])
            except ValueError as exc:
                raise MalformedDataError(f"{path}: row {r + 1}: {exc}") from exc
            if labels[r] < 0:
                raise LabelRangeError(f"{path}: row {r + 1}: negative label")
    if not np.isfinite(feats).all():
        raise NonFiniteValueError(f"{path}: non-finite feature value")
    return EmbeddingSet(feats, labels)
