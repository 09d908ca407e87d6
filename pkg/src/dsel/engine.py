"""Weighted category discovery on frozen features.

The "backbone" is the identity on stored embeddings: the only trained
parameters are K cosine-classifier prototypes (plus an optional linear
projection head for the contrastive losses). Prototypes seen in the
labeled data start at their category centroids, the rest at k-means++
seeds over the unlabeled features; mini-batch gradient descent then
minimizes the mixed classifier loss

    (1 - lam) * (self-distillation CE - epsilon * H(mean prediction))
    + lam * weighted CE on labeled instances

with the distillation targets gradient-stopped. Contrastive
representation losses are evaluated for diagnostics every epoch; they
produce parameter updates only for the optional projection head.

Per-instance weights scale each labeled instance's contribution to the
supervised losses linearly; weight zero removes the instance from
training entirely.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import clustering
from .data import EmbeddingSet, WeightAssignment, instance_weights
from .errors import (
    DivergenceError,
    InvalidParamError,
    MalformedHeaderError,
    ZeroNormError,
)

MODEL_MAGIC = b"DSMD"


@dataclass(frozen=True)
class HyperParams:
    tau_u: float = 0.07  # temperature of the self-supervised contrastive loss
    tau_s: float = 0.1  # temperature of the supervised losses and classifier
    lam: float = 0.35  # supervised-vs-unsupervised mixing weight
    epsilon: float = 1.0  # entropy regularizer weight
    lr: float = 0.1
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    aug_noise: float = 0.05  # view noise std, as a fraction of the mean feature norm

    def __post_init__(self):
        if self.tau_u <= 0 or self.tau_s <= 0:
            raise InvalidParamError("temperatures must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidParamError("lam must lie in [0, 1]")
        if self.epsilon < 0:
            raise InvalidParamError("epsilon must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidParamError("epochs and batch_size must be >= 1")


@dataclass
class DiscoveryModel:
    prototypes: np.ndarray  # (K, dim) float64
    projection: np.ndarray | None = None  # (proj_dim, dim) or None
    hyperparams: HyperParams | None = None

    @property
    def k(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass
class Batch:
    """Two noisy views of a slice of the training pool.

    labels are category ids for labeled members and -1 for unlabeled
    ones; weights align with rows and are only consulted for labeled
    members.
    """

    view_hat: np.ndarray
    view_tilde: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    indices: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.view_hat.shape[0]

    def labeled_mask(self) -> np.ndarray:
        return self.labels >= 0


def _normalize_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ZeroNormError(f"zero-norm {what}")
    return x / norms


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def soft_label_matrix(h: np.ndarray, model: DiscoveryModel, tau: float) -> np.ndarray:
    """Rows of cosine-softmax class probabilities over the K prototypes."""
    h_hat = _normalize_rows(np.asarray(h, dtype=np.float64), "feature")
    c_hat = _normalize_rows(model.prototypes, "prototype")
    return np.exp(_log_softmax(h_hat @ c_hat.T / tau))


def soft_labels(h: np.ndarray, model: DiscoveryModel, tau: float) -> np.ndarray:
    return soft_label_matrix(np.asarray(h, dtype=np.float64)[None, :], model, tau)[0]


def project_views(batch: Batch, projection: np.ndarray | None = None):
    """Unit-normalized contrastive views, through the projection if any."""
    hat = batch.view_hat.astype(np.float64)
    tilde = batch.view_tilde.astype(np.float64)
    if projection is not None:
        hat = hat @ projection.T
        tilde = tilde @ projection.T
    return _normalize_rows(hat, "projected view"), _normalize_rows(tilde, "projected view")


def loss_rep_u(batch: Batch, views, tau_u: float) -> float:
    """Self-supervised contrastive loss over the whole batch: each tilde
    view must be retrieved by its own hat view against all others."""
    z_hat, z_tilde = views
    logits = z_hat @ z_tilde.T / tau_u  # [j, i] = hat_j . tilde_i
    col_lse = _log_softmax(logits.T)  # row i: log softmax over j
    pos = np.diag(col_lse)
    return float(-pos.mean())


def loss_rep_s(batch: Batch, views, tau_s: float) -> float:
    """Weighted supervised contrastive loss over the labeled sub-batch."""
    z_hat, z_tilde = views
    mask = batch.labeled_mask()
    if not mask.any():
        return 0.0
    zh, zt = z_hat[mask], z_tilde[mask]
    labels = batch.labels[mask]
    w = batch.weights[mask]
    n = len(labels)
    logits = zh @ zt.T / tau_s
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    skipped = 0
    total = 0.0
    for i in range(n):
        if w[i] == 0.0:
            continue
        positives = np.flatnonzero(same[i])
        if len(positives) == 0:
            skipped += 1
            continue
        others = np.concatenate([logits[i, :i], logits[i, i + 1 :]])
        lse = _lse(others)
        total += w[i] * float((lse - logits[i, positives]).mean())
    if skipped:
        warnings.warn(
            f"{skipped} labeled instances had no positive in the batch",
            RuntimeWarning,
            stacklevel=2,
        )
    return total / n


def _lse(v: np.ndarray) -> float:
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def loss_cls_l(batch: Batch, model: DiscoveryModel, tau_s: float) -> float:
    """Weighted cross-entropy of hat-view soft labels against ground truth."""
    mask = batch.labeled_mask()
    if not mask.any():
        return 0.0
    logp = _log_softmax(
        _normalize_rows(batch.view_hat[mask].astype(np.float64), "feature")
        @ _normalize_rows(model.prototypes, "prototype").T
        / tau_s
    )
    labels = batch.labels[mask]
    w = batch.weights[mask]
    total = 0.0
    for i in range(len(labels)):
        if w[i] == 0.0:
            continue
        total += w[i] * -logp[i, labels[i]]
    return total / len(labels)


def loss_cls_u(
    batch: Batch,
    model: DiscoveryModel,
    tau_s: float,
    epsilon: float,
    frozen_targets: np.ndarray | None = None,
) -> float:
    """Self-distillation CE between the two views minus the entropy of the
    batch-mean prediction. The tilde-view targets carry no gradient; they
    can be passed in explicitly to evaluate the loss the gradient sees."""
    p_hat, logp_hat = _hat_predictions(batch, model, tau_s)
    p_tilde = (
        frozen_targets
        if frozen_targets is not None
        else soft_label_matrix(batch.view_tilde, model, tau_s)
    )
    ce = float(-(p_tilde * logp_hat).sum(axis=1).mean())
    p_bar = (p_hat.sum(axis=0) + p_tilde.sum(axis=0)) / (2.0 * batch.size)
    return ce - epsilon * _entropy(p_bar)


def _hat_predictions(batch, model, tau_s):
    logits = (
        _normalize_rows(batch.view_hat.astype(np.float64), "feature")
        @ _normalize_rows(model.prototypes, "prototype").T
        / tau_s
    )
    logp = _log_softmax(logits)
    return np.exp(logp), logp


def _entropy(p: np.ndarray) -> float:
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def total_loss(batch: Batch, model: DiscoveryModel, hp: HyperParams) -> dict:
    """All loss components and their mixed total."""
    views = project_views(batch, model.projection)
    rep_u = loss_rep_u(batch, views, hp.tau_u)
    rep_s = loss_rep_s(batch, views, hp.tau_s)
    cls_l = loss_cls_l(batch, model, hp.tau_s)
    cls_u = loss_cls_u(batch, model, hp.tau_s, hp.epsilon)
    total = (1.0 - hp.lam) * (rep_u + cls_u) + hp.lam * (rep_s + cls_l)
    return {
        "rep_u": rep_u,
        "rep_s": rep_s,
        "cls_l": cls_l,
        "cls_u": cls_u,
        "total": total,
    }


def classifier_loss(
    batch: Batch, model: DiscoveryModel, hp: HyperParams, frozen_targets: np.ndarray
) -> float:
    """The exact objective the prototype gradient differentiates."""
    return (1.0 - hp.lam) * loss_cls_u(
        batch, model, hp.tau_s, hp.epsilon, frozen_targets
    ) + hp.lam * loss_cls_l(batch, model, hp.tau_s)


def prototype_gradient(
    batch: Batch,
    model: DiscoveryModel,
    hp: HyperParams,
    frozen_targets: np.ndarray | None = None,
) -> np.ndarray:
    """Exact gradient of the classifier losses with respect to every
    prototype, including the Jacobian of the row normalization.

    The distillation targets are constants; when not supplied they are
    computed from the tilde views at the current prototypes.
    """
    if frozen_targets is None:
        frozen_targets = soft_label_matrix(batch.view_tilde, model, hp.tau_s)
    tau = hp.tau_s
    n = batch.size
    h_hat = _normalize_rows(batch.view_hat.astype(np.float64), "feature")
    norms = np.linalg.norm(model.prototypes, axis=1)
    if (norms == 0).any():
        raise ZeroNormError("zero-norm prototype")
    c_hat = model.prototypes / norms[:, None]
    cos = h_hat @ c_hat.T
    p_hat = np.exp(_log_softmax(cos / tau))

    # self-distillation CE
    g_s = (p_hat - frozen_targets) / n
    # entropy of the mean prediction (tilde half is constant)
    if hp.epsilon != 0.0:
        p_bar = (p_hat.sum(axis=0) + frozen_targets.sum(axis=0)) / (2.0 * n)
        g = -(np.log(np.maximum(p_bar, 1e-300)) + 1.0)
        ent = p_hat * (g[None, :] - (p_hat @ g)[:, None]) / (2.0 * n)
        g_s = g_s - hp.epsilon * ent
    g_s = (1.0 - hp.lam) * g_s

    mask = batch.labeled_mask()
    if mask.any() and hp.lam != 0.0:
        nl = int(mask.sum())
        onehot = np.zeros((nl, model.k))
        onehot[np.arange(nl), batch.labels[mask]] = 1.0
        gl = batch.weights[mask][:, None] * (p_hat[mask] - onehot) / nl
        g_s[mask] += hp.lam * gl

    w_mat = g_s.T @ h_hat  # (K, dim)
    colsum = (g_s * cos).sum(axis=0)
    return (w_mat - c_hat * colsum[:, None]) / (tau * norms[:, None])


def projection_gradient(batch: Batch, model: DiscoveryModel, hp: HyperParams) -> np.ndarray:
    """Exact gradient of the mixed contrastive losses with respect to the
    projection matrix, through both views and their normalization."""
    if model.projection is None:
        raise InvalidParamError("model has no projection head")
    proj = model.projection
    hat_raw = batch.view_hat.astype(np.float64) @ proj.T
    tilde_raw = batch.view_tilde.astype(np.float64) @ proj.T
    z_hat = _normalize_rows(hat_raw, "projected view")
    z_tilde = _normalize_rows(tilde_raw, "projected view")
    n = batch.size

    # unsupervised: logits[j, i] = hat_j . tilde_i / tau_u
    logits = z_hat @ z_tilde.T / hp.tau_u
    q = np.exp(_log_softmax(logits.T)).T  # softmax over j per column i
    d_logits = (q - np.eye(n)) / n
    d_zhat = d_logits @ z_tilde / hp.tau_u
    d_ztilde = d_logits.T @ z_hat / hp.tau_u
    d_zhat *= 1.0 - hp.lam
    d_ztilde *= 1.0 - hp.lam

    mask = batch.labeled_mask()
    if mask.any() and hp.lam != 0.0:
        idx = np.flatnonzero(mask)
        zh, zt = z_hat[idx], z_tilde[idx]
        labels = batch.labels[idx]
        w = batch.weights[idx]
        nl = len(idx)
        b_logits = zh @ zt.T / hp.tau_s
        same = labels[:, None] == labels[None, :]
        np.fill_diagonal(same, False)
        d_b = np.zeros_like(b_logits)
        for i in range(nl):
            if w[i] == 0.0:
                continue
            positives = np.flatnonzero(same[i])
            if len(positives) == 0:
                continue
            row = np.concatenate([b_logits[i, :i], b_logits[i, i + 1 :]])
            m = row.max()
            ex = np.exp(b_logits[i] - m)
            ex[i] = 0.0
            q_row = ex / ex.sum()
            d_b[i] += (w[i] / nl) * q_row
            d_b[i, positives] -= w[i] / (nl * len(positives))
        d_zhat[idx] += hp.lam * (d_b @ zt) / hp.tau_s
        d_ztilde[idx] += hp.lam * (d_b.T @ zh) / hp.tau_s

    grad = np.zeros_like(proj)
    for d_z, raw, z, src in (
        (d_zhat, hat_raw, z_hat, batch.view_hat),
        (d_ztilde, tilde_raw, z_tilde, batch.view_tilde),
    ):
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        d_raw = (d_z - z * (d_z * z).sum(axis=1, keepdims=True)) / norms
        grad += d_raw.T @ src.astype(np.float64)
    return grad


def representation_loss(batch: Batch, model: DiscoveryModel, hp: HyperParams) -> float:
    views = project_views(batch, model.projection)
    return (1.0 - hp.lam) * loss_rep_u(batch, views, hp.tau_u) + hp.lam * loss_rep_s(
        batch, views, hp.tau_s
    )


def init_prototypes(
    labeled: EmbeddingSet | None,
    unlabeled: EmbeddingSet,
    k: int,
    rng: np.random.Generator,
    active_weight: np.ndarray | None = None,
    mode: str = "anchored",
) -> np.ndarray:
    """Prototype slots below the labeled category count are anchored at
    category centroids when that category carries weight; every other
    slot is k-means++ seeded from the unlabeled features."""
    dim = unlabeled.dim
    if mode == "random":
        scale = float(np.linalg.norm(unlabeled.features, axis=1).mean()) / math.sqrt(dim)
        return rng.standard_normal((k, dim)) * scale
    protos = np.zeros((k, dim))
    anchored = np.zeros(k, dtype=bool)
    if labeled is not None:
        cents = clustering.category_centroids(labeled)
        if cents.k > k:
            raise InvalidParamError(f"K={k} below {cents.k} labeled categories")
        for c in range(cents.k):
            if active_weight is None or active_weight[c] > 0:
                protos[c] = cents.centroids[c]
                anchored[c] = True
    free = np.flatnonzero(~anchored)
    if len(free):
        existing = protos[anchored] if anchored.any() else None
        seeds = clustering._pp_chain(
            unlabeled.features.astype(np.float64), len(free), rng, existing
        )
        protos[free] = seeds
    return protos


def train(
    labeled: EmbeddingSet | None,
    unlabeled: EmbeddingSet,
    weights: WeightAssignment | None,
    hp: HyperParams,
    k: int,
    *,
    use_projection: bool = False,
    proj_dim: int | None = None,
    init: str = "anchored",
    log_path=None,
) -> DiscoveryModel:
    """Mini-batch gradient descent on the classifier losses over frozen
    features; deterministic for a fixed seed.

    Labeled instances whose category weight is zero are dropped from the
    training pool, so a zero weight behaves like removing the data.
    """
    if labeled is not None:
        labeled.require_labels()
        if labeled.dim != unlabeled.dim:
            raise InvalidParamError("labeled and unlabeled dims differ")
        if weights is None:
            weights = WeightAssignment.all_ones(labeled.n_categories)
        w_inst = instance_weights(weights, labeled)
        cat_weight = np.zeros(labeled.n_categories)
        for c, v in weights.category_weights.items():
            if 0 <= c < labeled.n_categories:
                cat_weight[c] = v
        if k < labeled.n_categories:
            raise InvalidParamError(
                f"K={k} below {labeled.n_categories} labeled categories"
            )
        keep = w_inst > 0
        lab_feats = labeled.features[keep]
        lab_labels = labeled.labels[keep]
        lab_w = w_inst[keep]
    else:
        cat_weight = None
        lab_feats = np.empty((0, unlabeled.dim), dtype=np.float32)
        lab_labels = np.empty(0, dtype=np.int32)
        lab_w = np.empty(0)

    rng = np.random.default_rng(hp.seed)
    protos = init_prototypes(
        labeled if len(lab_labels) else None,
        unlabeled,
        k,
        rng,
        active_weight=cat_weight,
        mode=init,
    )

    pool = np.vstack([lab_feats.astype(np.float64), unlabeled.features.astype(np.float64)])
    pool_labels = np.concatenate(
        [lab_labels.astype(np.int64), np.full(unlabeled.n_instances, -1, dtype=np.int64)]
    )
    pool_w = np.concatenate([lab_w, np.ones(unlabeled.n_instances)])
    n_pool = len(pool)

    # view noise calibrated on the weighted mean feature norm of the pool
    norms = np.linalg.norm(pool, axis=1)
    noise_std = hp.aug_noise * float((norms * pool_w).sum() / pool_w.sum())

    projection = None
    if use_projection:
        p_dim = proj_dim or unlabeled.dim
        projection = rng.standard_normal((p_dim, unlabeled.dim)) / math.sqrt(unlabeled.dim)

    model = DiscoveryModel(protos, projection, hp)
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(hp.epochs):
            order = rng.permutation(n_pool)
            sums = {"rep_u": 0.0, "rep_s": 0.0, "cls_l": 0.0, "cls_u": 0.0, "total": 0.0}
            n_batches = 0
            for start in range(0, n_pool, hp.batch_size):
                idx = order[start : start + hp.batch_size]
                noise = rng.normal(0.0, noise_std, size=(2, len(idx), unlabeled.dim))
                batch = Batch(
                    view_hat=pool[idx] + noise[0],
                    view_tilde=pool[idx] + noise[1],
                    labels=pool_labels[idx],
                    weights=pool_w[idx],
                    indices=idx,
                )
                targets = soft_label_matrix(batch.view_tilde, model, hp.tau_s)
                grad = prototype_gradient(batch, model, hp, frozen_targets=targets)
                model.prototypes = model.prototypes - hp.lr * grad
                if projection is not None:
                    p_grad = projection_gradient(batch, model, hp)
                    projection = projection - hp.lr * p_grad
                    model.projection = projection
                losses = total_loss(batch, model, hp)
                for key in sums:
                    sums[key] += losses[key]
                n_batches += 1
            means = {key: sums[key] / n_batches for key in sums}
            if not all(math.isfinite(v) for v in means.values()) or not np.isfinite(
                model.prototypes
            ).all():
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}",
                    diagnostics={"epoch": epoch, "losses": means},
                )
            if log_file:
                log_file.write(json.dumps({"epoch": epoch, **means}, sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    return model


def assign_labels(model: DiscoveryModel, unlabeled) -> np.ndarray:
    """Argmax soft label per instance; ties go to the lower prototype id."""
    feats = getattr(unlabeled, "features", unlabeled)
    probs = soft_label_matrix(np.asarray(feats, dtype=np.float64), model,
                              model.hyperparams.tau_s if model.hyperparams else 0.1)
    return probs.argmax(axis=1).astype(np.int64)


def save_model(model: DiscoveryModel, path):
    """Checkpoint: DSMD magic, u32 K, u32 dim, f32 prototypes, JSON trailer."""
    trailer = {
        "hyperparams": asdict(model.hyperparams) if model.hyperparams else None,
        "projection": None if model.projection is None else model.projection.tolist(),
    }
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", model.k, model.dim))
        f.write(model.prototypes.astype("<f4").tobytes())
        f.write(json.dumps(trailer, sort_keys=True).encode("utf-8"))


def load_model(path) -> DiscoveryModel:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MODEL_MAGIC:
        raise MalformedHeaderError(f"{path}: missing DSMD magic")
    k, dim = struct.unpack("<II", blob[4:12])
    nbytes = 4 * k * dim
    if len(blob) < 12 + nbytes:
        raise MalformedHeaderError(f"{path}: truncated prototype matrix")
    protos = np.frombuffer(blob[12 : 12 + nbytes], dtype="<f4").reshape(k, dim)
    trailer = json.loads(blob[12 + nbytes :].decode("utf-8"))
    hp = HyperParams(**trailer["hyperparams"]) if trailer.get("hyperparams") else None
    projection = (
        np.array(trailer["projection"], dtype=np.float64)
        if trailer.get("projection") is not None
        else None
    )
    return DiscoveryModel(protos.astype(np.float64), projection, hp)
