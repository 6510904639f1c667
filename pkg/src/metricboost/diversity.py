"""Diversity regularizers over the learner groups.

Two losses push the groups apart:

* Activation loss: suppresses simultaneous cross-group activation. For each
  sample and each group pair (i < j) it penalizes
  sum_{k in G_i, l in G_j} (f_i_k * f_j_l)^2, which factorizes into
  ||f_i||^2 * ||f_j||^2, plus a unit-norm penalty on the d per-output-column
  vectors of W so the zero matrix is not a solution.

* Adversarial loss: a two-layer regressor per ordered group pair (j -> i,
  i < j) is trained to map group j's vector onto group i's, maximizing the
  elementwise-product similarity (1/d_j) * sum_k (f_i_k * g(f_j)_k)^2. A
  gradient reversal sits between the embedding and the regressors: the
  regressors descend toward higher similarity while the embedding receives
  the sign-flipped similarity gradient and descends toward lower similarity.
  Weight growth is kept in check by unit-norm penalties on regressor rows, a
  hinge on the concatenated biases, and the same column penalty on W. Those
  penalty gradients are never sign-flipped.

The embedding gradient is always computed against the precomputed features,
so none of this ever backpropagates into a backbone.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


def _column_penalty(W):
    """Unit-norm penalty on the d columns of W: sum_i (||w_i||^2 - 1)^2."""
    col_sq = np.sum(W * W, axis=0)
    value = float(np.sum((col_sq - 1.0) ** 2))
    grad = 4.0 * (col_sq - 1.0)[None, :] * W
    return value, grad


def _row_penalty(mat):
    """Unit-norm penalty on the rows (output-neuron vectors) of a matrix."""
    row_sq = np.sum(mat * mat, axis=1)
    value = float(np.sum((row_sq - 1.0) ** 2))
    grad = 4.0 * (row_sq - 1.0)[:, None] * mat
    return value, grad


@dataclass
class ActivationResult:
    loss: float
    sup_term: float  # mean cross-group activation product
    weight_term: float  # unscaled column penalty
    grad_W: np.ndarray


def activation_loss(model, features, lambda_w):
    """Activation loss and its analytic W gradient over a feature batch."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgument("activation loss needs a nonempty 2-D batch")
    n = X.shape[0]
    phi = model.embed_features(X)
    F = phi @ model.W
    part = model.partition
    M = part.num_groups

    # Q[n, m] = ||f_m(x_n)||^2;  sum_{i<j} Q_i Q_j = (T^2 - sum Q^2) / 2
    Q = np.empty((n, M))
    for m, sl in enumerate(part.slices()):
        Q[:, m] = np.sum(F[:, sl] ** 2, axis=1)
    T = Q.sum(axis=1)
    sup_per_sample = 0.5 * (T * T - np.sum(Q * Q, axis=1))
    sup_term = float(sup_per_sample.mean())

    dF = np.empty_like(F)
    for m, sl in enumerate(part.slices()):
        dF[:, sl] = (2.0 / n) * F[:, sl] * (T - Q[:, m])[:, None]
    grad_sup = phi.T @ dF

    weight_term, grad_pen = _column_penalty(model.W)
    loss = sup_term + lambda_w * weight_term
    return ActivationResult(loss, sup_term, weight_term, grad_sup + lambda_w * grad_pen)


@dataclass
class Regressor:
    """Two-layer map between group vector spaces: W2 relu(W1 v + b1) + b2."""

    W1: np.ndarray  # (hidden, d_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (d_out, hidden)
    b2: np.ndarray  # (d_out,)

    @property
    def d_in(self):
        return self.W1.shape[1]

    @property
    def d_out(self):
        return self.W2.shape[0]

    @property
    def hidden(self):
        return self.W1.shape[0]

    def forward(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.d_in:
            raise InvalidArgument(f"regressor expects dim {self.d_in}, got {v.shape[-1]}")
        return np.maximum(v @ self.W1.T + self.b1, 0.0) @ self.W2.T + self.b2

    def copy(self):
        return Regressor(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())


def regressor_forward(reg, v):
    """Map a single vector through a regressor (see Regressor.forward)."""
    return reg.forward(v)


def init_regressor(rng, d_in, d_out, hidden=512):
    """Glorot-uniform weights, zero biases."""
    l1 = np.sqrt(6.0 / (d_in + hidden))
    l2 = np.sqrt(6.0 / (hidden + d_out))
    return Regressor(
        W1=rng.uniform(-l1, l1, size=(hidden, d_in)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-l2, l2, size=(d_out, hidden)),
        b2=np.zeros(d_out),
    )


class RegressorBank:
    """One regressor per group pair (i < j), mapping group j onto group i."""

    def __init__(self, regressors):
        self.regressors = dict(regressors)

    @classmethod
    def create(cls, rng, partition, hidden=512):
        sizes = partition.sizes
        regs = {}
        for i in range(len(sizes)):
            for j in range(i + 1, len(sizes)):
                regs[(i, j)] = init_regressor(rng, sizes[j], sizes[i], hidden)
        return cls(regs)

    def keys(self):
        return sorted(self.regressors.keys())

    def __getitem__(self, key):
        return self.regressors[key]

    def __len__(self):
        return len(self.regressors)

    def matches(self, partition):
        sizes = partition.sizes
        M = len(sizes)
        want = {(i, j) for i in range(M) for j in range(i + 1, M)}
        if set(self.regressors) != want:
            return False
        return all(
            self[(i, j)].d_in == sizes[j] and self[(i, j)].d_out == sizes[i]
            for (i, j) in want
        )

    def copy(self):
        return RegressorBank({k: r.copy() for k, r in self.regressors.items()})


@dataclass
class RegressorGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class AdversarialResult:
    loss: float  # -sim_term + lambda_w * weight_term
    sim_term: float  # (1/N) sum_n sum_{i<j} L_sim
    weight_term: float  # unscaled penalties (regressors + W columns)
    grad_W: np.ndarray  # embedding gradient: reversed similarity + scaled W penalty
    grad_W_sim: np.ndarray  # similarity component of grad_W (reversal applied)
    grad_W_sim_unreversed: np.ndarray  # similarity gradient without the reversal layer
    regressor_grads: dict  # (i, j) -> RegressorGrads, gradient of the full loss


def adversarial_loss(model, bank, features, lambda_w, sim_normalizer="d_j",
                     reverse_target_path=True):
    """Adversarial loss with regressor gradients and the reversed W gradient.

    `sim_normalizer` picks the 1/d_j (default) or 1/d_i similarity scaling.
    `reverse_target_path` controls whether the direct f_i path is also routed
    through the reversal (default) or only the regressor-input f_j path.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgument("adversarial loss needs a nonempty 2-D batch")
    if sim_normalizer not in ("d_j", "d_i"):
        raise InvalidArgument(f"unknown sim_normalizer {sim_normalizer!r}")
    part = model.partition
    if not bank.matches(part):
        raise InvalidArgument("regressor bank does not match the model partition")
    n = X.shape[0]
    phi = model.embed_features(X)
    F = phi @ model.W
    slices = part.slices()
    sizes = part.sizes

    sim_term = 0.0
    dF_target = np.zeros_like(F)  # d(sim_term)/dF through the f_i path
    dF_source = np.zeros_like(F)  # d(sim_term)/dF through the f_j path
    reg_grads = {}
    penalty = 0.0

    for (i, j) in bank.keys():
        reg = bank[(i, j)]
        u = F[:, slices[i]]
        vj = F[:, slices[j]]
        norm = float(sizes[j] if sim_normalizer == "d_j" else sizes[i])

        pre = vj @ reg.W1.T + reg.b1
        hid = np.maximum(pre, 0.0)
        out = hid @ reg.W2.T + reg.b2
        prod = u * out
        sim_term += float(np.sum(prod * prod)) / (norm * n)

        scale = 2.0 / (norm * n)
        du = scale * prod * out
        dout = scale * prod * u
        gW2 = dout.T @ hid
        gb2 = dout.sum(axis=0)
        dhid = dout @ reg.W2
        dpre = dhid * (pre > 0.0)
        gW1 = dpre.T @ vj
        gb1 = dpre.sum(axis=0)
        dvj = dpre @ reg.W1

        dF_target[:, slices[i]] += du
        dF_source[:, slices[j]] += dvj

        # Unit-norm penalties on regressor rows plus the bias hinge.
        p1, gp1 = _row_penalty(reg.W1)
        p2, gp2 = _row_penalty(reg.W2)
        b_all = np.concatenate([reg.b1, reg.b2])
        bias_sq = float(b_all @ b_all)
        hinge_active = bias_sq - 1.0 > 0.0
        p_bias = max(0.0, bias_sq - 1.0)
        gb1_pen = 2.0 * reg.b1 if hinge_active else np.zeros_like(reg.b1)
        gb2_pen = 2.0 * reg.b2 if hinge_active else np.zeros_like(reg.b2)
        penalty += p1 + p2 + p_bias

        # Regressors descend the full loss: maximize similarity, bounded weights.
        reg_grads[(i, j)] = RegressorGrads(
            W1=-gW1 + lambda_w * gp1,
            b1=-gb1 + lambda_w * gb1_pen,
            W2=-gW2 + lambda_w * gp2,
            b2=-gb2 + lambda_w * gb2_pen,
        )

    w_pen, grad_w_pen = _column_penalty(model.W)
    penalty += w_pen

    grad_sim_target = phi.T @ dF_target
    grad_sim_source = phi.T @ dF_source
    # Without the reversal layer the embedding would descend -sim_term.
    grad_unrev = -(grad_sim_target + grad_sim_source)
    if reverse_target_path:
        grad_sim = grad_sim_target + grad_sim_source
    else:
        grad_sim = -grad_sim_target + grad_sim_source

    loss = -sim_term + lambda_w * penalty
    return AdversarialResult(
        loss=loss,
        sim_term=sim_term,
        weight_term=penalty,
        grad_W=grad_sim + lambda_w * grad_w_pen,
        grad_W_sim=grad_sim,
        grad_W_sim_unreversed=grad_unrev,
        regressor_grads=reg_grads,
    )


def diversity_loss(kind, model, features, lambda_w, bank=None, sim_normalizer="d_j",
                   reverse_target_path=True):
    """Dispatch to activation_loss or adversarial_loss."""
    if kind == "activation":
        return activation_loss(model, features, lambda_w)
    if kind == "adversarial":
        if bank is None:
            raise InvalidArgument("adversarial diversity needs a regressor bank")
        return adversarial_loss(
            model, bank, features, lambda_w,
            sim_normalizer=sim_normalizer, reverse_target_path=reverse_target_path,
        )
    raise InvalidArgument(f"unknown diversity kind {kind!r}")
