"""The partitioned embedding model.

A model maps an input feature vector to a d-dimensional embedding through a
linear matrix W (h x d), optionally behind a small trainable feature map
(one affine layer + ReLU). The embedding columns are split into M
non-overlapping groups; group m acts as an independent learner whose output
is compared with cosine similarity. A fixed convex-combination schedule
(eta_m = 2 / (m + 1), alpha_m = eta_m * prod_{n>m} (1 - eta_n)) weights the
learners; alpha also drives the proportional group sizing and the weighting
of the concatenated inference-time embedding.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .linalg import as_matrix, as_vector

# Hand-chosen group sizes for specific (embedding size, group count) setups.
# Note the (512, 4) row totals 510; the partition's own total governs W.
PRESET_GROUP_SIZES = {
    (512, 2): (170, 342),
    (512, 3): (96, 160, 256),
    (512, 4): (52, 102, 152, 204),
    (512, 5): (34, 68, 102, 138, 170),
    (1024, 3): (170, 342, 512),
    (1024, 4): (102, 204, 308, 410),
    (1024, 5): (68, 136, 204, 274, 342),
    (1024, 6): (50, 96, 148, 196, 242, 292),
    (1024, 7): (36, 74, 110, 148, 182, 218, 256),
}


@dataclass(frozen=True)
class GroupPartition:
    """Non-overlapping column groups of the embedding."""

    sizes: tuple
    offsets: tuple = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise InvalidArgument("partition needs at least one group")
        if any(s < 1 for s in sizes):
            raise InvalidArgument(f"group sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        offs = np.concatenate([[0], np.cumsum(sizes)])
        object.__setattr__(self, "offsets", tuple(int(o) for o in offs))

    @property
    def num_groups(self):
        return len(self.sizes)

    @property
    def total_dim(self):
        return self.offsets[-1]

    def slices(self):
        return [slice(self.offsets[m], self.offsets[m + 1]) for m in range(self.num_groups)]


@dataclass(frozen=True)
class BoostSchedule:
    """Fixed convex-combination coefficients for M learners."""

    eta: tuple
    alpha: tuple

    @property
    def num_learners(self):
        return len(self.eta)


def make_schedule(num_learners):
    """eta_m = 2/(m+1); alpha_m = eta_m * prod_{n=m+1..M} (1 - eta_n)."""
    M = int(num_learners)
    if M < 1:
        raise InvalidArgument("need at least one learner")
    eta = [2.0 / (m + 1.0) for m in range(1, M + 1)]
    alpha = []
    for m in range(M):
        a = eta[m]
        for n in range(m + 1, M):
            a *= 1.0 - eta[n]
        alpha.append(a)
    return BoostSchedule(eta=tuple(eta), alpha=tuple(alpha))


def proportional_partition(total_dim, num_groups):
    """Group sizes proportional to alpha: floor for all but the last group,
    remainder to the last."""
    d = int(total_dim)
    M = int(num_groups)
    if M < 1 or d < M:
        raise InvalidArgument(f"need total_dim >= num_groups >= 1, got d={d} M={M}")
    alpha = make_schedule(M).alpha
    sizes = [int(np.floor(alpha[m] * d)) for m in range(M - 1)]
    sizes.append(d - sum(sizes))
    if any(s < 1 for s in sizes):
        raise InvalidArgument(
            f"d={d} is too small to give all {M} groups a nonzero share"
        )
    return GroupPartition(tuple(sizes))


def preset_partition(total_dim, num_groups):
    """Hand-chosen sizes for known (d, M) setups, or None when there is no entry."""
    sizes = PRESET_GROUP_SIZES.get((int(total_dim), int(num_groups)))
    return GroupPartition(sizes) if sizes is not None else None


@dataclass
class Backbone:
    """One affine layer + ReLU in front of the embedding: phi(x) = relu(x A^T + c)."""

    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def forward(self, x):
        """x: (in_dim,) or (n, in_dim). Returns activations with matching shape."""
        pre = np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias
        return np.maximum(pre, 0.0)

    def forward_with_pre(self, x):
        """Returns (activations, pre-activations); the latter feeds the ReLU mask."""
        pre = np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias
        return np.maximum(pre, 0.0), pre


def init_backbone(rng, in_dim, out_dim):
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    bias = np.zeros(out_dim)
    return Backbone(weight=weight, bias=bias)


class EnsembleModel:
    """Embedding matrix W plus its group partition and boosting schedule."""

    def __init__(self, embedding, partition, schedule=None, backbone=None):
        self.W = as_matrix(embedding)
        self.partition = partition
        if self.W.shape[1] != partition.total_dim:
            raise InvalidArgument(
                f"W has {self.W.shape[1]} columns, partition needs {partition.total_dim}"
            )
        self.schedule = schedule or make_schedule(partition.num_groups)
        if self.schedule.num_learners != partition.num_groups:
            raise InvalidArgument("schedule and partition disagree on group count")
        if backbone is not None and backbone.out_dim != self.W.shape[0]:
            raise InvalidArgument("backbone output dim must match W rows")
        self.backbone = backbone

    @property
    def feature_dim(self):
        """Rows of W, i.e. the dimensionality the embedding reads."""
        return self.W.shape[0]

    @property
    def input_dim(self):
        """Dimensionality of raw inputs (backbone input when present)."""
        return self.backbone.in_dim if self.backbone is not None else self.W.shape[0]

    @property
    def embedding_dim(self):
        return self.W.shape[1]

    @property
    def num_groups(self):
        return self.partition.num_groups

    def embed_features(self, x):
        """Apply the backbone (identity when absent)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise InvalidArgument(
                f"input has dim {x.shape[-1]}, model expects {self.input_dim}"
            )
        return self.backbone.forward(x) if self.backbone is not None else x

    def forward_batch(self, x):
        """Raw embeddings for a batch: (n, input_dim) -> (n, d)."""
        return self.embed_features(x) @ self.W

    def learner_forward(self, x):
        """Per-group raw embeddings f_1..f_M of a single input vector."""
        x = as_vector(x, dim=self.input_dim)
        full = self.embed_features(x) @ self.W
        return [full[sl] for sl in self.partition.slices()]

    def test_embedding(self, x, weight_exponent=1.0, renormalize_full=False):
        """Concatenated inference-time embedding.

        Each group output is L2-normalized and scaled by alpha^weight_exponent.
        Exponent 1.0 matches the stated weighting; 0.5 makes dot products of two
        embeddings equal the ensemble score sum(alpha_m * s_m) exactly.
        """
        parts = self.learner_forward(x)
        out = np.empty(self.partition.total_dim)
        for m, (part, sl) in enumerate(zip(parts, self.partition.slices())):
            n = np.linalg.norm(part)
            if n == 0.0:
                raise DegenerateInput(f"group {m} produced a zero embedding")
            out[sl] = (self.schedule.alpha[m] ** weight_exponent) * (part / n)
        if renormalize_full:
            out /= np.linalg.norm(out)
        return out

    def test_embeddings(self, x, weight_exponent=1.0, renormalize_full=False):
        """Batch version of test_embedding: (n, input_dim) -> (n, d)."""
        feats = np.asarray(x, dtype=np.float64)
        if feats.ndim != 2:
            raise InvalidArgument("expected a 2-D batch of feature rows")
        full = self.forward_batch(feats)
        out = np.empty_like(full)
        for m, sl in enumerate(self.partition.slices()):
            norms = np.linalg.norm(full[:, sl], axis=1)
            if np.any(norms == 0.0):
                bad = int(np.flatnonzero(norms == 0.0)[0])
                raise DegenerateInput(f"group {m} produced a zero embedding for row {bad}")
            scale = self.schedule.alpha[m] ** weight_exponent
            out[:, sl] = scale * full[:, sl] / norms[:, None]
        if renormalize_full:
            out /= np.linalg.norm(out, axis=1, keepdims=True)
        return out

    def copy(self):
        backbone = None
        if self.backbone is not None:
            backbone = Backbone(self.backbone.weight.copy(), self.backbone.bias.copy())
        return EnsembleModel(self.W.copy(), self.partition, self.schedule, backbone)


def init_model(rng, feature_dim, partition, backbone_in_dim=None):
    """Fresh model with Glorot-uniform W (and backbone when requested)."""
    h = int(feature_dim)
    d = partition.total_dim
    limit = np.sqrt(6.0 / (h + d))
    W = rng.uniform(-limit, limit, size=(h, d))
    backbone = None
    if backbone_in_dim is not None:
        backbone = init_backbone(rng, int(backbone_in_dim), h)
    return EnsembleModel(W, partition, backbone=backbone)


def cosine_sim_grad(u, v):
    """Cosine similarity of two vectors with gradients w.r.t. both inputs."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInput("cosine similarity of a zero-norm vector")
    s = float(u @ v / (nu * nv))
    ds_du = v / (nu * nv) - s * u / (nu * nu)
    ds_dv = u / (nu * nv) - s * v / (nv * nv)
    return s, ds_du, ds_dv


def cosine_sim_grad_batch(u, v):
    """Row-wise cosine similarity with gradients.

    u, v: (n, k). Returns (s, ds_du, ds_dv) with s (n,) and gradients (n, k).
    Rows where either input has zero norm are the caller's responsibility;
    a boolean validity mask is returned so callers can filter them.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    valid = (nu > 0.0) & (nv > 0.0)
    nu_safe = np.where(nu == 0.0, 1.0, nu)
    nv_safe = np.where(nv == 0.0, 1.0, nv)
    inv = 1.0 / (nu_safe * nv_safe)
    s = np.einsum("ij,ij->i", u, v) * inv
    ds_du = v * inv[:, None] - (s / (nu_safe * nu_safe))[:, None] * u
    ds_dv = u * inv[:, None] - (s / (nv_safe * nv_safe))[:, None] * v
    return s, ds_du, ds_dv, valid
