"""Training orchestration: batch sampling, combined updates, initialization.

A training step optimizes  L = L_metric + lambda_div * L_div  where L_metric
is the boosted pair/triplet loss and L_div an optional diversity regularizer.
The metric gradient reaches W and (when trainable) the backbone; the
diversity gradient reaches W only, plus the regressor bank for the
adversarial kind. Everything is driven by one seeded generator so that a run
is a pure function of (seed, config, data), and checkpoints capture enough
state (model, optimizer, bank, rng) for a resumed run to match an
uninterrupted one bit for bit.
"""

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from .boosting import (
    PairBatch,
    TripletBatch,
    accumulate_plain_gradient,
    accumulate_W_gradient,
)
from .diversity import RegressorBank, activation_loss, adversarial_loss
from .ensemble import (
    EnsembleModel,
    GroupPartition,
    init_model,
    preset_partition,
    proportional_partition,
)
from .errors import InvalidArgument, NumericFailure
from .evaluate import evaluate_model
from .linalg import make_child_rng, make_rng
from .losses import LossSpec
from .optim import Optimizer

log = logging.getLogger(__name__)

DIVERSITY_KINDS = ("none", "activation", "adversarial")
PARTITION_MODES = ("proportional", "preset", "explicit")

METRICS_HEADER = "iter,loss_metric,loss_div,r_at_1,feat_corr,clf_corr"


@dataclass(frozen=True)
class TrainConfig:
    """Run parameters; field names double as config-file keys."""

    loss: str = "binomial_deviance"
    beta1: float = 2.0
    beta2: float = 0.5
    margin_contrastive: float = 0.5
    margin_triplet: float = 0.01
    cost_pos: float = 1.0
    cost_neg: float = 25.0
    embedding_dim: int = 32
    num_groups: int = 3
    partition: str = "proportional"
    group_sizes: tuple = ()
    diversity: str = "none"
    lambda_div: float | None = None
    lambda_w: float = 100.0
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 1000
    batch_classes: int = 4
    samples_per_class: int = 5
    seed: int = 0
    weight_exponent: float = 1.0
    renormalize_full: bool = False
    boost_weight_signed: bool = False
    use_boosting: bool = True
    use_backbone: bool = False
    backbone_dim: int = 0
    backbone_trainable: bool = True
    regressor_hidden: int = 512
    sim_normalizer: str = "d_j"
    reverse_target_path: bool = True
    max_pairs_per_batch: int = 0
    eval_interval: int = 0
    eval_ks: tuple = (1,)
    eval_pairs: int = 1000
    threads: int = 1

    def __post_init__(self):
        if self.diversity not in DIVERSITY_KINDS:
            raise InvalidArgument(f"unknown diversity kind {self.diversity!r}")
        if self.partition not in PARTITION_MODES:
            raise InvalidArgument(f"unknown partition mode {self.partition!r}")
        if self.lambda_div is not None and self.lambda_div < 0:
            raise InvalidArgument("lambda_div must be >= 0")
        if self.lambda_w < 0:
            raise InvalidArgument("lambda_w must be >= 0")
        if self.batch_classes < 2:
            raise InvalidArgument("batch_classes must be >= 2")
        if self.samples_per_class < 2:
            raise InvalidArgument("samples_per_class must be >= 2")
        if self.iterations < 0:
            raise InvalidArgument("iterations must be >= 0")
        if self.threads < 1:
            raise InvalidArgument("threads must be >= 1")

    def loss_spec(self):
        return LossSpec(
            kind=self.loss, beta1=self.beta1, beta2=self.beta2,
            margin_contrastive=self.margin_contrastive,
            margin_triplet=self.margin_triplet,
            cost_pos=self.cost_pos, cost_neg=self.cost_neg,
        )

    def resolved_lambda_div(self):
        if self.lambda_div is not None:
            return self.lambda_div
        return {"none": 0.0, "activation": 1e-2, "adversarial": 1e-3}[self.diversity]

    def resolve_partition(self):
        """Explicit sizes override everything; then preset; then proportional."""
        if self.group_sizes:
            return GroupPartition(tuple(int(s) for s in self.group_sizes))
        if self.partition == "preset":
            part = preset_partition(self.embedding_dim, self.num_groups)
            if part is None:
                raise InvalidArgument(
                    f"no preset group sizes for d={self.embedding_dim} M={self.num_groups}"
                )
            return part
        if self.partition == "explicit":
            raise InvalidArgument("partition=explicit needs group_sizes")
        return proportional_partition(self.embedding_dim, self.num_groups)


@dataclass
class SampledBatch:
    indices: np.ndarray  # (P*K,) rows of the dataset
    labels: np.ndarray  # (P*K,) class ids of those rows
    pairs: PairBatch | None = None
    triplets: TripletBatch | None = None


def sample_batch(fs, batch_classes, samples_per_class, rng, mine="pairs",
                 max_pairs=0, class_indices=None):
    """Class-balanced batch plus exhaustively mined pairs or triplets.

    Draws `batch_classes` classes without replacement, then
    `samples_per_class` rows per class (with replacement only when the class
    is smaller than requested). Pair mining enumerates every within-batch
    positive pair and every cross-class negative pair; triplet mining pairs
    each positive pair with one uniformly drawn negative. `max_pairs`
    subsamples negatives when the full enumeration would exceed it.
    """
    if fs.n_classes < 2:
        raise InvalidArgument("need at least 2 classes to mine pairs")
    P = int(batch_classes)
    K = int(samples_per_class)
    if fs.n_classes < P:
        raise InvalidArgument(f"dataset has {fs.n_classes} classes, need >= {P}")
    if class_indices is None:
        class_indices = fs.class_indices()
    classes = rng.choice(fs.n_classes, size=P, replace=False)
    picked = []
    for c in classes:
        idxs = class_indices[int(c)]
        if idxs.size == 0:
            raise InvalidArgument(f"class {int(c)} has no samples")
        take = rng.choice(idxs.size, size=K, replace=idxs.size < K)
        picked.append(idxs[take])
    indices = np.concatenate(picked)
    labels = np.repeat(classes.astype(np.int64), K)

    n = P * K
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    batch = SampledBatch(indices=indices, labels=labels)

    if mine == "pairs":
        pos_i, pos_j = iu[same], ju[same]
        neg_i, neg_j = iu[~same], ju[~same]
        if max_pairs and len(pos_i) + len(neg_i) > max_pairs:
            budget = max(0, max_pairs - len(pos_i))
            if len(neg_i) > budget:
                pick = rng.choice(len(neg_i), size=budget, replace=False)
                pick.sort()
                neg_i, neg_j = neg_i[pick], neg_j[pick]
        batch.pairs = PairBatch(
            np.concatenate([pos_i, neg_i]),
            np.concatenate([pos_j, neg_j]),
            np.concatenate([np.ones(len(pos_i), dtype=np.int64),
                            np.zeros(len(neg_i), dtype=np.int64)]),
        )
    elif mine == "triplets":
        anchor, positive = iu[same], ju[same]
        # Each class contributes exactly K positions, so every anchor has the
        # same number of cross-class candidates.
        pools = np.empty((P, n - K), dtype=np.intp)
        pos_of_class = np.arange(n).reshape(P, K)
        for a in range(P):
            pools[a] = np.delete(np.arange(n), pos_of_class[a])
        anchor_class = labels[anchor]
        # Map labels back to their row in `classes` (draw order).
        label_to_row = {int(c): r for r, c in enumerate(classes)}
        rows = np.array([label_to_row[int(l)] for l in anchor_class], dtype=np.intp)
        draw = rng.integers(0, n - K, size=len(anchor))
        negative = pools[rows, draw]
        batch.triplets = TripletBatch(anchor, positive, negative)
    else:
        raise InvalidArgument(f"unknown mining mode {mine!r}")
    return batch


@dataclass
class StepResult:
    loss_metric: float
    loss_div: float
    n_used: int
    n_skipped: int


def _param_dicts(model, bank, train_backbone, train_bank):
    params = {"W": model.W}
    if train_backbone and model.backbone is not None:
        params["backbone.weight"] = model.backbone.weight
        params["backbone.bias"] = model.backbone.bias
    if train_bank and bank is not None:
        for (i, j) in bank.keys():
            reg = bank[(i, j)]
            params[f"bank.{i}.{j}.W1"] = reg.W1
            params[f"bank.{i}.{j}.b1"] = reg.b1
            params[f"bank.{i}.{j}.W2"] = reg.W2
            params[f"bank.{i}.{j}.b2"] = reg.b2
    return params


def train_step(cfg, model, bank, opt, features, batch):
    """One combined update on a sampled batch. Returns scalar losses."""
    spec = cfg.loss_spec()
    mined = batch.triplets if spec.kind == "triplet" else batch.pairs
    if mined is None:
        raise InvalidArgument("batch was mined for a different loss family")
    train_backbone = cfg.backbone_trainable and model.backbone is not None
    if cfg.use_boosting:
        res = accumulate_W_gradient(
            model, features, mined, spec,
            signed=cfg.boost_weight_signed, train_backbone=train_backbone,
        )
    else:
        res = accumulate_plain_gradient(
            model, features, mined, spec, train_backbone=train_backbone,
        )

    grads = {"W": res.grad_W}
    if train_backbone:
        grads["backbone.weight"] = res.grad_backbone_weight
        grads["backbone.bias"] = res.grad_backbone_bias

    loss_div = 0.0
    lam = cfg.resolved_lambda_div()
    use_bank = cfg.diversity == "adversarial"
    if cfg.diversity == "activation":
        div = activation_loss(model, features, cfg.lambda_w)
        loss_div = div.loss
        if lam != 0.0:
            grads["W"] = grads["W"] + lam * div.grad_W
    elif cfg.diversity == "adversarial":
        div = adversarial_loss(
            model, bank, features, cfg.lambda_w,
            sim_normalizer=cfg.sim_normalizer,
            reverse_target_path=cfg.reverse_target_path,
        )
        loss_div = div.loss
        if lam != 0.0:
            grads["W"] = grads["W"] + lam * div.grad_W
            for (i, j) in bank.keys():
                rg = div.regressor_grads[(i, j)]
                grads[f"bank.{i}.{j}.W1"] = lam * rg.W1
                grads[f"bank.{i}.{j}.b1"] = lam * rg.b1
                grads[f"bank.{i}.{j}.W2"] = lam * rg.W2
                grads[f"bank.{i}.{j}.b2"] = lam * rg.b2

    params = _param_dicts(model, bank, train_backbone, use_bank and lam != 0.0)
    opt.step(params, grads)
    return StepResult(res.loss, loss_div, res.n_used, res.n_skipped)


@dataclass
class InitResult:
    model: EnsembleModel
    bank: RegressorBank | None
    final_loss: float
    initial_div_term: float  # suppression / similarity term before any update
    final_div_term: float
    iterations_run: int
    norms_in_band: bool


def init_solver(features, model, kind, lambda_w, lr=0.01, momentum=0.9,
                max_iterations=5000, tol=1e-6, tol_window=100, bank=None,
                sim_normalizer="d_j", reverse_target_path=True):
    """Minimize a diversity loss over W with SGD + momentum, features frozen.

    Stops at max_iterations or when the loss changes by less than `tol`
    (relatively) over `tol_window` iterations. Afterwards every column of W
    should have squared norm within 1 +/- 1e-3; violations emit a warning.
    """
    X = np.asarray(features, dtype=np.float64)
    if kind not in ("activation", "adversarial"):
        raise InvalidArgument(f"init solver needs a diversity kind, got {kind!r}")
    if kind == "adversarial" and bank is None:
        raise InvalidArgument("adversarial initialization needs a regressor bank")
    if max_iterations < 1:
        raise InvalidArgument("init solver needs max_iterations >= 1")
    opt = Optimizer(kind="sgd_momentum", lr=lr, momentum=momentum)
    history = []
    initial_term = None
    final_loss = float("nan")
    it = 0
    for it in range(int(max_iterations)):
        if kind == "activation":
            div = activation_loss(model, X, lambda_w)
            term = div.sup_term
            grads = {"W": div.grad_W}
        else:
            div = adversarial_loss(
                model, bank, X, lambda_w,
                sim_normalizer=sim_normalizer,
                reverse_target_path=reverse_target_path,
            )
            term = div.sim_term
            grads = {"W": div.grad_W}
            for (i, j) in bank.keys():
                rg = div.regressor_grads[(i, j)]
                grads[f"bank.{i}.{j}.W1"] = rg.W1
                grads[f"bank.{i}.{j}.b1"] = rg.b1
                grads[f"bank.{i}.{j}.W2"] = rg.W2
                grads[f"bank.{i}.{j}.b2"] = rg.b2
        if not np.isfinite(div.loss):
            raise NumericFailure(f"init solver diverged at iteration {it}: loss={div.loss}")
        if initial_term is None:
            initial_term = term
        final_loss = div.loss
        history.append(div.loss)
        if it >= tol_window:
            ref = history[it - tol_window]
            if abs(history[it] - ref) <= tol * max(abs(ref), 1e-12):
                break
        params = _param_dicts(model, bank, False, kind == "adversarial")
        opt.step(params, grads)

    if kind == "activation":
        final_term = activation_loss(model, X, lambda_w).sup_term
    else:
        final_term = adversarial_loss(
            model, bank, X, lambda_w,
            sim_normalizer=sim_normalizer, reverse_target_path=reverse_target_path,
        ).sim_term

    col_sq = np.sum(model.W * model.W, axis=0)
    in_band = bool(np.all(np.abs(col_sq - 1.0) <= 1e-3))
    if not in_band:
        worst = float(np.max(np.abs(col_sq - 1.0)))
        warnings.warn(
            f"init solver left {int(np.sum(np.abs(col_sq - 1.0) > 1e-3))} column "
            f"squared norms outside 1 +/- 1e-3 (worst deviation {worst:.2e}); "
            f"consider a larger lambda_w or more iterations"
        )
    return InitResult(
        model=model, bank=bank, final_loss=final_loss,
        initial_div_term=float(initial_term), final_div_term=float(final_term),
        iterations_run=it + 1, norms_in_band=in_band,
    )


def build_model(cfg, feature_dim, rng, bank_rng=None):
    """Fresh model (and bank, when adversarial diversity is on) from a config.

    The bank draws from its own stream (derived from the seed when not given)
    so that enabling the adversarial regularizer does not shift the main
    training draw sequence.
    """
    part = cfg.resolve_partition()
    h = cfg.backbone_dim if (cfg.use_backbone and cfg.backbone_dim > 0) else feature_dim
    backbone_in = feature_dim if cfg.use_backbone else None
    model = init_model(rng, h, part, backbone_in_dim=backbone_in)
    bank = None
    if cfg.diversity == "adversarial":
        if bank_rng is None:
            bank_rng = make_child_rng(cfg.seed, 1)
        bank = RegressorBank.create(bank_rng, part, hidden=cfg.regressor_hidden)
    return model, bank


@dataclass
class RunResult:
    model: EnsembleModel
    bank: RegressorBank | None
    optimizer: Optimizer
    rng: np.random.Generator
    iteration: int
    metrics_rows: list = field(default_factory=list)

    def metrics_csv(self):
        lines = [METRICS_HEADER]
        for row in self.metrics_rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, int):
        return str(v)
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return "nan"
    return repr(float(v))


def _eval_row(cfg, model, fs, iteration):
    ks = tuple(sorted(set(cfg.eval_ks) | {1}))  # the CSV row always needs r@1
    report = evaluate_model(
        model, fs, ks=ks, weight_exponent=cfg.weight_exponent,
        renormalize_full=cfg.renormalize_full, n_eval_pairs=cfg.eval_pairs,
        pair_seed=cfg.seed * 1_000_003 + iteration,
    )
    return report


def run(cfg, fs, eval_fs=None, resume=None, metrics_path=None):
    """Full training run; returns final state and per-interval metrics rows.

    `resume` is a Checkpoint: model weights are adopted, and optimizer / bank
    / rng state continue exactly where they left off when present. The
    metrics CSV gains one row per eval interval:
    iter,loss_metric,loss_div,r_at_1,feat_corr,clf_corr
    """
    spec = cfg.loss_spec()
    mine = "triplets" if spec.kind == "triplet" else "pairs"
    rng = make_rng(cfg.seed)
    start_iter = 0
    if resume is not None:
        model = resume.model
        bank = resume.bank
        start_iter = resume.iteration
        if cfg.diversity == "adversarial" and bank is None:
            bank = RegressorBank.create(
                make_child_rng(cfg.seed, 1), model.partition, hidden=cfg.regressor_hidden,
            )
        opt = resume.optimizer or Optimizer(
            kind=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum,
            beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
        )
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
    else:
        model, bank = build_model(cfg, fs.feature_dim, rng)
        opt = Optimizer(
            kind=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum,
            beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
        )

    class_idx = fs.class_indices()
    eval_data = eval_fs if eval_fs is not None else fs
    rows = []
    fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        if fh:
            fh.write(METRICS_HEADER + "\n")
        for it in range(start_iter, cfg.iterations):
            batch = sample_batch(
                fs, cfg.batch_classes, cfg.samples_per_class, rng,
                mine=mine, max_pairs=cfg.max_pairs_per_batch, class_indices=class_idx,
            )
            X = fs.features[batch.indices]
            try:
                step = train_step(cfg, model, bank, opt, X, batch)
            except NumericFailure as exc:
                raise NumericFailure(f"iteration {it}: {exc}") from exc
            if step.n_skipped:
                log.debug("iteration %d: skipped %d degenerate items", it, step.n_skipped)
            if cfg.eval_interval and (it + 1) % cfg.eval_interval == 0:
                report = _eval_row(cfg, model, eval_data, it + 1)
                row = (
                    it + 1, step.loss_metric, step.loss_div,
                    report.recall_at[1], report.feature_corr, report.clf_corr,
                )
                rows.append(row)
                if fh:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
                    fh.flush()
    finally:
        if fh:
            fh.close()
    return RunResult(
        model=model, bank=bank, optimizer=opt, rng=rng,
        iteration=max(start_iter, cfg.iterations), metrics_rows=rows,
    )
