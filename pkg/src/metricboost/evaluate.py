"""Retrieval and diversity diagnostics.

Recall@K ranks every other sample by dot-product similarity of the
inference-time embeddings (ties broken by ascending sample index) and scores
a query as hit when any of its top K carries the query's label.

The two correlation diagnostics quantify ensemble redundancy, lower meaning
more diverse: feature correlation is the mean absolute Pearson correlation
over all cross-group dimension pairs of the raw group outputs; classifier
correlation is the mean absolute Pearson correlation between the per-pair
cosine score vectors of the learners.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import InvalidArgument, UndefinedCorrelation
from .linalg import make_rng

log = logging.getLogger(__name__)


def recall_at_k(embeddings, labels, ks):
    """Recall@K for each K in `ks` over a single embedded sample set."""
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if E.ndim != 2 or E.shape[0] != labels.shape[0]:
        raise InvalidArgument("embeddings and labels disagree")
    n = E.shape[0]
    if n < 2:
        raise InvalidArgument("need at least 2 samples")
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks):
        raise InvalidArgument("K must be >= 1")
    if max(ks) >= n:
        raise InvalidArgument(f"K must be < number of samples ({n})")
    sims = E @ E.T
    np.fill_diagonal(sims, -np.inf)
    # Stable sort on descending similarity = tie-break by ascending index.
    order = np.argsort(-sims, axis=1, kind="stable")
    out = {}
    for k in sorted(set(ks)):
        top = order[:, :k]
        hits = (labels[top] == labels[:, None]).any(axis=1)
        out[k] = float(hits.mean())
    return out


def per_learner_recall_at_1(model, features, labels):
    """Recall@1 of each group on its own, cosine similarity within the group."""
    F = model.forward_batch(np.asarray(features, dtype=np.float64))
    out = []
    for sl in model.partition.slices():
        sub = F[:, sl]
        norms = np.linalg.norm(sub, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        out.append(recall_at_k(sub / norms, labels, [1])[1])
    return out


def feature_correlation(model, features):
    """Mean |Pearson| over all cross-group dimension pairs of raw outputs.

    Constant dimensions are skipped (and logged); with fewer than two groups
    the quantity is undefined.
    """
    if model.num_groups < 2:
        raise InvalidArgument("feature correlation needs at least 2 groups")
    F = model.forward_batch(np.asarray(features, dtype=np.float64))
    n, d = F.shape
    if n < 2:
        raise InvalidArgument("need at least 2 samples")
    centered = F - F.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    valid = norms > 0.0
    n_constant = int((~valid).sum())
    if n_constant:
        log.debug("feature_correlation: skipping %d constant dimensions", n_constant)
    group_of = np.empty(d, dtype=np.intp)
    for m, sl in enumerate(model.partition.slices()):
        group_of[sl] = m
    safe = np.where(valid, norms, 1.0)
    Z = centered / safe
    corr = Z.T @ Z
    iu, ju = np.triu_indices(d, k=1)
    mask = (group_of[iu] != group_of[ju]) & valid[iu] & valid[ju]
    if not mask.any():
        raise UndefinedCorrelation("no usable cross-group dimension pairs")
    vals = np.abs(corr[iu[mask], ju[mask]])
    return float(np.clip(vals, 0.0, 1.0).mean())


def classifier_correlation(model, features, index_a, index_b):
    """Mean |Pearson| between learners' per-pair cosine score vectors."""
    if model.num_groups < 2:
        raise InvalidArgument("classifier correlation needs at least 2 groups")
    index_a = np.asarray(index_a, dtype=np.intp)
    index_b = np.asarray(index_b, dtype=np.intp)
    if len(index_a) != len(index_b) or len(index_a) < 2:
        raise InvalidArgument("need at least 2 evaluation pairs")
    F = model.forward_batch(np.asarray(features, dtype=np.float64))
    scores = []
    keep = np.ones(len(index_a), dtype=bool)
    for sl in model.partition.slices():
        u = F[index_a, sl]
        v = F[index_b, sl]
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        keep &= (nu > 0.0) & (nv > 0.0)
        nu[nu == 0.0] = 1.0
        nv[nv == 0.0] = 1.0
        scores.append(np.einsum("ij,ij->i", u, v) / (nu * nv))
    if keep.sum() < 2:
        raise UndefinedCorrelation("fewer than 2 usable evaluation pairs")
    if not keep.all():
        log.debug("classifier_correlation: dropped %d degenerate pairs", int((~keep).sum()))
    scores = [s[keep] for s in scores]
    M = len(scores)
    vals = []
    for i in range(M):
        for j in range(i + 1, M):
            si = scores[i] - scores[i].mean()
            sj = scores[j] - scores[j].mean()
            ni = np.linalg.norm(si)
            nj = np.linalg.norm(sj)
            if ni == 0.0 or nj == 0.0:
                raise UndefinedCorrelation("a learner produced constant pair scores")
            vals.append(abs(float(si @ sj / (ni * nj))))
    return float(np.clip(np.mean(vals), 0.0, 1.0))


def make_eval_pairs(labels, rng, max_pairs=2000):
    """Deterministic positive + negative evaluation pairs for diagnostics."""
    labels = np.asarray(labels)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    pos_mask = labels[iu] == labels[ju]
    pos_i, pos_j = iu[pos_mask], ju[pos_mask]
    neg_i, neg_j = iu[~pos_mask], ju[~pos_mask]
    half = max(1, max_pairs // 2)
    if len(pos_i) > half:
        pick = rng.choice(len(pos_i), size=half, replace=False)
        pick.sort()
        pos_i, pos_j = pos_i[pick], pos_j[pick]
    n_neg = min(len(neg_i), max(1, len(pos_i)))
    if len(neg_i) > n_neg:
        pick = rng.choice(len(neg_i), size=n_neg, replace=False)
        pick.sort()
        neg_i, neg_j = neg_i[pick], neg_j[pick]
    return np.concatenate([pos_i, neg_i]), np.concatenate([pos_j, neg_j])


@dataclass
class EvalReport:
    recall_at: dict
    feature_corr: float | None
    clf_corr: float | None
    per_learner_r1: list = field(default_factory=list)

    def table(self):
        lines = ["metric            value"]
        for k in sorted(self.recall_at):
            lines.append(f"recall@{k:<10d} {self.recall_at[k]:.6f}")
        fc = "n/a" if self.feature_corr is None else f"{self.feature_corr:.6f}"
        cc = "n/a" if self.clf_corr is None else f"{self.clf_corr:.6f}"
        lines.append(f"feature_corr      {fc}")
        lines.append(f"clf_corr          {cc}")
        for m, r in enumerate(self.per_learner_r1, start=1):
            lines.append(f"learner{m}_r@1      {r:.6f}")
        return "\n".join(lines)

    def csv(self):
        cols = [f"r_at_{k}" for k in sorted(self.recall_at)]
        cols += ["feature_corr", "clf_corr"]
        cols += [f"learner{m}_r_at_1" for m in range(1, len(self.per_learner_r1) + 1)]
        vals = [repr(self.recall_at[k]) for k in sorted(self.recall_at)]
        vals.append("nan" if self.feature_corr is None else repr(self.feature_corr))
        vals.append("nan" if self.clf_corr is None else repr(self.clf_corr))
        vals += [repr(r) for r in self.per_learner_r1]
        return ",".join(cols) + "\n" + ",".join(vals) + "\n"


def evaluate_model(model, fs, ks=(1, 2, 4, 8), weight_exponent=1.0,
                   renormalize_full=False, n_eval_pairs=2000, pair_seed=0):
    """Full diagnostic report on a feature set."""
    emb = model.test_embeddings(
        fs.features, weight_exponent=weight_exponent, renormalize_full=renormalize_full
    )
    recall = recall_at_k(emb, fs.labels, ks)
    per_learner = per_learner_recall_at_1(model, fs.features, fs.labels)
    feature_corr = None
    clf_corr = None
    if model.num_groups >= 2:
        feature_corr = feature_correlation(model, fs.features)
        rng = make_rng(pair_seed)
        ia, ib = make_eval_pairs(fs.labels, rng, max_pairs=n_eval_pairs)
        clf_corr = classifier_correlation(model, fs.features, ia, ib)
    return EvalReport(
        recall_at=recall,
        feature_corr=feature_corr,
        clf_corr=clf_corr,
        per_learner_r1=per_learner,
    )
