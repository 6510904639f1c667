"""Online boosting over pair and triplet batches.

Forward pass: per-learner cosine scores are blended into a running ensemble
score, s^m = (1 - eta_m) s^{m-1} + eta_m s_m, starting from s^0 = 0. Backward
pass: learner m backprops its own loss scaled by a difficulty weight w^m,
where w^1 = 1 and w^{m+1} is derived from the loss derivative at the
accumulated score s^m (i.e. including learner m). Weights are treated as
constants by the gradient: nothing differentiates through the reweighting.

Triplets keep two accumulators, one for the positive and one for the negative
pair, and the hinge derivative turns the weight into exactly 0 or 1.

`accumulate_W_gradient` applies the chain rule through cosine similarity and
the (optionally backbone-fronted) linear embedding for a whole mined batch at
once; items whose embedding collapses to zero norm in any group are skipped
and counted rather than raising.
"""

from dataclasses import dataclass

import numpy as np

from .ensemble import cosine_sim_grad_batch
from .errors import InvalidArgument
from .losses import boosting_weight_vec, pair_loss_vec, triplet_loss_vec


@dataclass(frozen=True)
class PairItem:
    index_a: int
    index_b: int
    y: int

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise InvalidArgument("a pair needs two distinct samples")
        if self.y not in (0, 1):
            raise InvalidArgument("pair label must be 0 or 1")


@dataclass(frozen=True)
class TripletItem:
    anchor: int
    positive: int
    negative: int

    def __post_init__(self):
        if len({self.anchor, self.positive, self.negative}) != 3:
            raise InvalidArgument("a triplet needs three distinct samples")


@dataclass
class PairBatch:
    """Column-wise pair arrays (indices into the feature batch)."""

    index_a: np.ndarray
    index_b: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.index_a = np.asarray(self.index_a, dtype=np.intp)
        self.index_b = np.asarray(self.index_b, dtype=np.intp)
        self.y = np.asarray(self.y, dtype=np.int64)
        if not (len(self.index_a) == len(self.index_b) == len(self.y)):
            raise InvalidArgument("pair arrays must have equal length")
        if np.any(self.index_a == self.index_b):
            raise InvalidArgument("pairs must join distinct samples")

    def __len__(self):
        return len(self.y)

    @classmethod
    def from_items(cls, items):
        return cls(
            np.array([p.index_a for p in items], dtype=np.intp),
            np.array([p.index_b for p in items], dtype=np.intp),
            np.array([p.y for p in items], dtype=np.int64),
        )


@dataclass
class TripletBatch:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.intp)
        self.positive = np.asarray(self.positive, dtype=np.intp)
        self.negative = np.asarray(self.negative, dtype=np.intp)
        if not (len(self.anchor) == len(self.positive) == len(self.negative)):
            raise InvalidArgument("triplet arrays must have equal length")

    def __len__(self):
        return len(self.anchor)

    @classmethod
    def from_items(cls, items):
        return cls(
            np.array([t.anchor for t in items], dtype=np.intp),
            np.array([t.positive for t in items], dtype=np.intp),
            np.array([t.negative for t in items], dtype=np.intp),
        )


@dataclass
class BoostTrace:
    """Forward/backward record for a pair batch: all arrays (..., M)."""

    scores: np.ndarray  # per-learner s_m
    acc: np.ndarray  # accumulated s^m
    weights: np.ndarray  # w^m
    losses: np.ndarray  # per-learner loss at s_m
    weighted_dloss: np.ndarray  # w^m * dloss/ds_m


@dataclass
class TripletTrace:
    scores_pos: np.ndarray
    scores_neg: np.ndarray
    acc_pos: np.ndarray
    acc_neg: np.ndarray
    weights: np.ndarray
    losses: np.ndarray
    weighted_dpos: np.ndarray
    weighted_dneg: np.ndarray


def boost_forward_pair(schedule, scores):
    """Accumulate per-learner scores: s^m = (1 - eta_m) s^{m-1} + eta_m s_m.

    `scores` has learner index last: shape (M,) or (n, M). Returns the
    accumulations with the same shape; the final entry is the ensemble score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    M = schedule.num_learners
    if scores.shape[-1] != M:
        raise InvalidArgument(f"expected {M} learner scores, got {scores.shape[-1]}")
    acc = np.empty_like(scores)
    prev = np.zeros(scores.shape[:-1])
    for m in range(M):
        prev = (1.0 - schedule.eta[m]) * prev + schedule.eta[m] * scores[..., m]
        acc[..., m] = prev
    return acc


def _pair_weights(spec, schedule, acc, y, signed):
    """w^1 = 1; w^{m+1} from the loss derivative at s^m."""
    M = schedule.num_learners
    w = np.empty_like(acc)
    w[..., 0] = 1.0
    for m in range(1, M):
        w[..., m] = boosting_weight_vec(spec, s=acc[..., m - 1], y=y, signed=signed)
    return w


def boost_backward_pair(spec, schedule, scores, y, signed=False):
    """Full forward + backward record for a pair batch.

    scores: (M,) or (n, M) per-learner cosine scores; y: scalar or (n,).
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    acc = boost_forward_pair(schedule, scores)
    w = _pair_weights(spec, schedule, acc, y, signed)
    M = schedule.num_learners
    losses = np.empty_like(scores)
    dloss = np.empty_like(scores)
    for m in range(M):
        losses[..., m], dloss[..., m] = pair_loss_vec(spec, scores[..., m], y)
    return BoostTrace(
        scores=scores, acc=acc, weights=w, losses=losses, weighted_dloss=w * dloss
    )


def boost_step_triplet(spec, schedule, scores_pos, scores_neg):
    """Forward + backward record for a triplet batch (dual accumulators)."""
    if spec.kind != "triplet":
        raise InvalidArgument("boost_step_triplet needs a triplet loss spec")
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    acc_pos = boost_forward_pair(schedule, scores_pos)
    acc_neg = boost_forward_pair(schedule, scores_neg)
    M = schedule.num_learners
    w = np.empty_like(scores_pos)
    w[..., 0] = 1.0
    for m in range(1, M):
        w[..., m] = boosting_weight_vec(
            spec, s_pos=acc_pos[..., m - 1], s_neg=acc_neg[..., m - 1]
        )
    losses = np.empty_like(scores_pos)
    dpos = np.empty_like(scores_pos)
    dneg = np.empty_like(scores_pos)
    for m in range(M):
        losses[..., m], dpos[..., m], dneg[..., m] = triplet_loss_vec(
            spec, scores_pos[..., m], scores_neg[..., m]
        )
    return TripletTrace(
        scores_pos=scores_pos,
        scores_neg=scores_neg,
        acc_pos=acc_pos,
        acc_neg=acc_neg,
        weights=w,
        losses=losses,
        weighted_dpos=w * dpos,
        weighted_dneg=w * dneg,
    )


@dataclass
class GradResult:
    grad_W: np.ndarray
    grad_backbone_weight: np.ndarray | None
    grad_backbone_bias: np.ndarray | None
    loss: float  # mean reweighted metric loss over used items
    n_used: int
    n_skipped: int


def _group_cosine(F, partition, idx_u, idx_v):
    """Per-group cosine scores and input gradients for index pairs into F.

    Returns (scores (n, M), grads_u (n, d), grads_v (n, d), valid (n,)) where
    the gradient rows live in the group's column slice.
    """
    n = len(idx_u)
    M = partition.num_groups
    scores = np.empty((n, M))
    grads_u = np.empty((n, partition.total_dim))
    grads_v = np.empty((n, partition.total_dim))
    valid = np.ones(n, dtype=bool)
    for m, sl in enumerate(partition.slices()):
        s, du, dv, ok = cosine_sim_grad_batch(F[idx_u, sl], F[idx_v, sl])
        scores[:, m] = s
        grads_u[:, sl] = du
        grads_v[:, sl] = dv
        valid &= ok
    return scores, grads_u, grads_v, valid


def _finish_gradient(model, features, dF):
    """Chain dL/dF back into W and, when trainable, the backbone."""
    X = np.asarray(features, dtype=np.float64)
    if model.backbone is None:
        phi = X
        grad_W = phi.T @ dF
        return grad_W, None, None
    phi, pre = model.backbone.forward_with_pre(X)
    grad_W = phi.T @ dF
    dphi = dF @ model.W.T
    dpre = dphi * (pre > 0.0)
    grad_bw = dpre.T @ X
    grad_bb = dpre.sum(axis=0)
    return grad_W, grad_bw, grad_bb


def accumulate_W_gradient(model, features, batch, spec, signed=False, train_backbone=False):
    """Gradient of the mean reweighted metric loss over a mined batch.

    `features`: (n_samples, input_dim) raw inputs; `batch`: PairBatch or
    TripletBatch of indices into those rows. Weights w^m are computed from the
    current forward pass and frozen; the returned gradient is exact for the
    objective with those weights held constant. Items with a zero-norm group
    embedding are dropped and counted in n_skipped.
    """
    X = np.asarray(features, dtype=np.float64)
    F = model.forward_batch(X)
    part = model.partition
    d = part.total_dim
    dF = np.zeros_like(F)

    if isinstance(batch, PairBatch):
        idx_a, idx_b, y = batch.index_a, batch.index_b, batch.y
        scores, gU, gV, valid = _group_cosine(F, part, idx_a, idx_b)
        n_used = int(valid.sum())
        n_skipped = len(valid) - n_used
        if n_used == 0:
            return GradResult(np.zeros_like(model.W), None, None, 0.0, 0, n_skipped)
        idx_a, idx_b, y = idx_a[valid], idx_b[valid], y[valid]
        scores, gU, gV = scores[valid], gU[valid], gV[valid]
        trace = boost_backward_pair(spec, model.schedule, scores, y, signed=signed)
        coeff = trace.weighted_dloss / n_used  # (n, M)
        dFa = np.empty((n_used, d))
        dFb = np.empty((n_used, d))
        for m, sl in enumerate(part.slices()):
            dFa[:, sl] = coeff[:, m, None] * gU[:, sl]
            dFb[:, sl] = coeff[:, m, None] * gV[:, sl]
        np.add.at(dF, idx_a, dFa)
        np.add.at(dF, idx_b, dFb)
        loss = float(np.mean(np.sum(trace.weights * trace.losses, axis=-1)))
    elif isinstance(batch, TripletBatch):
        if spec.kind != "triplet":
            raise InvalidArgument("triplet batches need a triplet loss spec")
        ia, ip, ineg = batch.anchor, batch.positive, batch.negative
        s_pos, gAp, gP, ok_p = _group_cosine(F, part, ia, ip)
        s_neg, gAn, gN, ok_n = _group_cosine(F, part, ia, ineg)
        valid = ok_p & ok_n
        n_used = int(valid.sum())
        n_skipped = len(valid) - n_used
        if n_used == 0:
            return GradResult(np.zeros_like(model.W), None, None, 0.0, 0, n_skipped)
        ia, ip, ineg = ia[valid], ip[valid], ineg[valid]
        s_pos, s_neg = s_pos[valid], s_neg[valid]
        gAp, gP, gAn, gN = gAp[valid], gP[valid], gAn[valid], gN[valid]
        trace = boost_step_triplet(spec, model.schedule, s_pos, s_neg)
        cp = trace.weighted_dpos / n_used
        cn = trace.weighted_dneg / n_used
        dA = np.empty((n_used, d))
        dP = np.empty((n_used, d))
        dN = np.empty((n_used, d))
        for m, sl in enumerate(part.slices()):
            dA[:, sl] = cp[:, m, None] * gAp[:, sl] + cn[:, m, None] * gAn[:, sl]
            dP[:, sl] = cp[:, m, None] * gP[:, sl]
            dN[:, sl] = cn[:, m, None] * gN[:, sl]
        np.add.at(dF, ia, dA)
        np.add.at(dF, ip, dP)
        np.add.at(dF, ineg, dN)
        loss = float(np.mean(np.sum(trace.weights * trace.losses, axis=-1)))
    else:
        raise InvalidArgument(f"unsupported batch type {type(batch).__name__}")

    want_backbone = train_backbone and model.backbone is not None
    if want_backbone:
        grad_W, grad_bw, grad_bb = _finish_gradient(model, X, dF)
    else:
        phi = model.embed_features(X)
        grad_W, grad_bw, grad_bb = phi.T @ dF, None, None
    return GradResult(grad_W, grad_bw, grad_bb, loss, n_used, n_skipped)


def accumulate_plain_gradient(model, features, batch, spec, train_backbone=False):
    """Baseline route: one global loss on the full embedding, no reweighting.

    Used for reduction-equivalence checks and for training unpartitioned
    baselines; deliberately bypasses all boosting machinery.
    """
    X = np.asarray(features, dtype=np.float64)
    F = model.forward_batch(X)
    dF = np.zeros_like(F)

    if isinstance(batch, PairBatch):
        idx_a, idx_b, y = batch.index_a, batch.index_b, batch.y
        s, gU, gV, valid = cosine_sim_grad_batch(F[idx_a], F[idx_b])
        n_used = int(valid.sum())
        n_skipped = len(valid) - n_used
        if n_used == 0:
            return GradResult(np.zeros_like(model.W), None, None, 0.0, 0, n_skipped)
        idx_a, idx_b, y = idx_a[valid], idx_b[valid], y[valid]
        s, gU, gV = s[valid], gU[valid], gV[valid]
        losses, dloss = pair_loss_vec(spec, s, y)
        coeff = dloss / n_used
        np.add.at(dF, idx_a, coeff[:, None] * gU)
        np.add.at(dF, idx_b, coeff[:, None] * gV)
        loss = float(np.mean(losses))
    elif isinstance(batch, TripletBatch):
        if spec.kind != "triplet":
            raise InvalidArgument("triplet batches need a triplet loss spec")
        ia, ip, ineg = batch.anchor, batch.positive, batch.negative
        s_pos, gAp, gP, ok_p = cosine_sim_grad_batch(F[ia], F[ip])
        s_neg, gAn, gN, ok_n = cosine_sim_grad_batch(F[ia], F[ineg])
        valid = ok_p & ok_n
        n_used = int(valid.sum())
        n_skipped = len(valid) - n_used
        if n_used == 0:
            return GradResult(np.zeros_like(model.W), None, None, 0.0, 0, n_skipped)
        ia, ip, ineg = ia[valid], ip[valid], ineg[valid]
        s_pos, s_neg = s_pos[valid], s_neg[valid]
        gAp, gP, gAn, gN = gAp[valid], gP[valid], gAn[valid], gN[valid]
        losses, dpos, dneg = triplet_loss_vec(spec, s_pos, s_neg)
        cp = dpos / n_used
        cn = dneg / n_used
        np.add.at(dF, ia, cp[:, None] * gAp + cn[:, None] * gAn)
        np.add.at(dF, ip, cp[:, None] * gP)
        np.add.at(dF, ineg, cn[:, None] * gN)
        loss = float(np.mean(losses))
    else:
        raise InvalidArgument(f"unsupported batch type {type(batch).__name__}")

    want_backbone = train_backbone and model.backbone is not None
    if want_backbone:
        grad_W, grad_bw, grad_bb = _finish_gradient(model, X, dF)
    else:
        phi = model.embed_features(X)
        grad_W, grad_bw, grad_bb = phi.T @ dF, None, None
    return GradResult(grad_W, grad_bw, grad_bb, loss, n_used, n_skipped)
