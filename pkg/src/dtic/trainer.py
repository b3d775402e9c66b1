"""Two-pass training.

Pass one minimises reconstruction + auxiliary losses. The cluster centres are
then initialised by k-means on the embeddings, and pass two adds the weighted
KL clustering term, refreshing the target distribution over the whole cohort
every ``target_interval`` updates until the hard-label change rate drops below
``delta``. Final phenotypes come from k-means on the refined embeddings.
"""
import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gradcore as gc
from .batch import PaddedCohort
from .clustering import assign_nearest, kmeans, match_labels, soft_assign, target_dist
from .interpnet import ALPHA_INIT
from .model import Dims, embed, init_params, losses, make_fake_batch
from .reinterp import THETA_INIT
from .seeding import substream

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "loss_total", "loss_recon", "loss_reg", "loss_bce", "loss_kl", "label_change_frac")


@dataclass
class TrainConfig:
    batch_size: int = 64
    pretrain_iters: int = 2000
    cluster_iters: int = 2000
    target_interval: int = 100
    delta: float = 0.001
    lambda_cluster: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    k: int = 4
    grid_size: int = 36
    hidden: int = 128
    kappa: float = 10.0
    alpha_init: float = ALPHA_INIT
    theta_init: float = THETA_INIT
    fake_fraction: float = 0.5
    n_init: int = 10

    def __post_init__(self):
        positive_ints = ("batch_size", "target_interval", "k", "grid_size", "hidden", "n_init")
        for name in positive_ints:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("pretrain_iters", "cluster_iters"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.lambda_cluster < 0:
            raise ValueError("lambda_cluster must be non-negative")
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")
        if not (self.alpha_init > 0 and self.theta_init > 0):
            raise ValueError("initial bandwidths must be positive")
        if not 0.0 <= self.fake_fraction <= 1.0:
            raise ValueError("fake_fraction must lie in [0, 1]")
        self.adam  # validates the optimiser settings

    @property
    def adam(self):
        return gc.AdamHyper(self.lr, self.beta1, self.beta2, self.eps)

    @property
    def dims(self):
        return Dims(self.grid_size, self.hidden, self.kappa)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**data)


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; ``checkpoint`` is the last good state."""

    def __init__(self, message, terms, checkpoint):
        super().__init__(message)
        self.terms = terms
        self.checkpoint = checkpoint


@dataclass
class TrainedModel:
    config: TrainConfig
    params: dict
    log: list = field(default_factory=list)
    checkpoint: dict = None
    labels: np.ndarray = None  # current hard labels (argmax q after cluster training)
    centroids: np.ndarray = None  # phenotype centres used for assignment
    stop_reason: str = None
    refresh_fracs: list = field(default_factory=list)

    @property
    def dims(self):
        return self.config.dims

    @property
    def k(self):
        mu = self.params.get("cluster.mu")
        return None if mu is None else mu.shape[0]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


class EpochSampler:
    """Fixed-size batches without replacement; reshuffled every epoch."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.size = min(batch_size, n)
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self):
        if self.pos + self.size > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos:self.pos + self.size]
        self.pos += self.size
        return idx

    def state(self):
        return {"perm": self.perm.tolist(), "pos": self.pos, "rng": self.rng.bit_generator.state}

    @classmethod
    def restore(cls, n, batch_size, state):
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng"]
        obj = cls.__new__(cls)
        obj.n, obj.size, obj.rng = n, min(batch_size, n), rng
        obj.perm = np.asarray(state["perm"], dtype=np.int64)
        obj.pos = int(state["pos"])
        return obj


def _padded(cohort):
    return cohort if isinstance(cohort, PaddedCohort) else PaddedCohort.from_encounters(cohort)


def _restore_rng(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def total_loss(real, fake, params, config, phase="pretrain", p_target=None):
    """Scalar loss and per-term breakdown (floats) on one paired batch."""
    P = {k: gc.const(v) for k, v in params.items()}
    use_kl = phase == "joint"
    total, terms = losses(P, real, fake, config.dims, p_target if use_kl else None, config.lambda_cluster)
    out = {k: v.item() for k, v in terms.items()}
    out["total"] = total.item()
    if not math.isfinite(out["total"]):
        raise gc.NonFiniteError("loss", str(out))
    return out["total"], out


def _step(params, adam, real, fake, config, p_target):
    terms_out = {}

    def fn(P):
        total, terms = losses(P, real, fake, config.dims, p_target, config.lambda_cluster)
        terms_out.update({k: v.item() for k, v in terms.items()})
        return total

    total, grads = gc.forward_backward(fn, params)
    terms_out["total"] = total
    if not math.isfinite(total):
        raise gc.NonFiniteError("loss", str(terms_out))
    if p_target is None:
        grads.pop("cluster.mu", None)
    new_params, new_adam = gc.adam_step(params, grads, adam, config.adam)
    for name, arr in new_params.items():
        if not np.all(np.isfinite(arr)):
            raise gc.NonFiniteError(f"parameter {name}", str(terms_out))
    return new_params, new_adam, terms_out


def _log_row(it, terms, frac=None):
    return {"iter": it, "loss_total": terms["total"], "loss_recon": terms["recon"], "loss_reg": terms["reg"],
            "loss_bce": terms["bce"], "loss_kl": terms.get("kl"), "label_change_frac": frac}


def _state_dict(phase, it, params, adam, sampler, fake_rng, log_rows, extra=None):
    state = {
        "phase": phase,
        "iteration": it,
        "params": {k: v.copy() for k, v in params.items()},
        "adam": {"step": adam.step, "m": {k: v.copy() for k, v in adam.m.items()},
                 "v": {k: v.copy() for k, v in adam.v.items()}},
        "sampler": sampler.state(),
        "fake_rng": fake_rng.bit_generator.state,
        "log": copy.deepcopy(log_rows),
    }
    if extra:
        state.update(copy.deepcopy(extra))
    return state


def _adam_from(state):
    a = state["adam"]
    return gc.AdamState(int(a["step"]), {k: np.asarray(v, dtype=np.float64) for k, v in a["m"].items()},
                        {k: np.asarray(v, dtype=np.float64) for k, v in a["v"].items()})


# ---------------------------------------------------------------------------
# pass one
# ---------------------------------------------------------------------------


def pretrain(cohort, config, resume=None):
    """Reconstruction + auxiliary training for ``config.pretrain_iters`` updates."""
    data = _padded(cohort)
    n = len(data)
    if n == 0:
        raise ValueError("empty cohort")
    if resume is not None:
        if resume.get("phase") != "pretrain":
            raise ValueError("checkpoint is not from the pretraining pass")
        params = {k: np.asarray(v, dtype=np.float64) for k, v in resume["params"].items()}
        adam = _adam_from(resume)
        sampler = EpochSampler.restore(n, config.batch_size, resume["sampler"])
        fake_rng = _restore_rng(resume["fake_rng"])
        start = int(resume["iteration"])
        rows = copy.deepcopy(resume["log"])
    else:
        params = init_params(config.dims, substream(config.seed, "init"), config.alpha_init, config.theta_init)
        adam = gc.AdamState.zeros(params)
        sampler = EpochSampler(n, config.batch_size, substream(config.seed, "pretrain.batches"))
        fake_rng = substream(config.seed, "pretrain.fakes")
        start = 0
        rows = []
    good = _state_dict("pretrain", start, params, adam, sampler, fake_rng, rows)
    for it in range(start, config.pretrain_iters):
        real = data.take(sampler.next())
        fake = make_fake_batch(real, fake_rng, config.fake_fraction)
        try:
            params, adam, terms = _step(params, adam, real, fake, config, None)
        except gc.NonFiniteError as exc:
            raise TrainingDiverged(f"pretraining diverged at iteration {it}: {exc}", str(exc), good) from exc
        rows.append(_log_row(it, terms))
        good = _state_dict("pretrain", it + 1, params, adam, sampler, fake_rng, rows)
        if it % 100 == 0:
            log.info("pretrain %d: %s", it, {k: round(v, 5) for k, v in terms.items()})
    return TrainedModel(config, params, rows, good, stop_reason="max_iter")


# ---------------------------------------------------------------------------
# pass two
# ---------------------------------------------------------------------------


def init_clusters(model, cohort, k=None, seed=None):
    """k-means on the pretrained embeddings; stores centres as ``cluster.mu``."""
    k = model.config.k if k is None else k
    seed = model.config.seed if seed is None else seed
    Z = embed(model.params, _padded(cohort), model.dims)
    fit = kmeans(Z, k, seed=seed, n_init=model.config.n_init)
    model.params["cluster.mu"] = fit.centroids.copy()
    model.labels = fit.labels.copy()
    return fit.centroids, fit.labels


def refresh_targets(params, data, dims):
    """Full-cohort soft assignment, target distribution and hard labels."""
    Z = embed(params, data, dims)
    q = soft_assign(Z, params["cluster.mu"])
    return q, target_dist(q), q.argmax(axis=1)


def cluster_train(model, cohort, config=None, resume=None):
    """Joint training with the clustering term; stops on label stability or budget."""
    config = config or model.config
    data = _padded(cohort)
    n = len(data)
    if resume is not None:
        if resume.get("phase") != "joint":
            raise ValueError("checkpoint is not from the clustering pass")
        params = {k: np.asarray(v, dtype=np.float64) for k, v in resume["params"].items()}
        adam = _adam_from(resume)
        sampler = EpochSampler.restore(n, config.batch_size, resume["sampler"])
        fake_rng = _restore_rng(resume["fake_rng"])
        start = int(resume["iteration"])
        rows = copy.deepcopy(resume["log"])
        labels = np.asarray(resume["labels"], dtype=np.int64)
        fracs = list(resume["refresh_fracs"])
        p_all = np.asarray(resume["p"], dtype=np.float64)
    else:
        if "cluster.mu" not in model.params:
            raise ValueError("cluster centres not initialised; call init_clusters first")
        params = {k: v.copy() for k, v in model.params.items()}
        adam = gc.AdamState.zeros(params)
        sampler = EpochSampler(n, config.batch_size, substream(config.seed, "joint.batches"))
        fake_rng = substream(config.seed, "joint.fakes")
        start = 0
        rows = list(model.log)
        _, p_all, labels = refresh_targets(params, data, config.dims)
        if model.labels is not None and len(model.labels) == n:
            labels = np.asarray(model.labels, dtype=np.int64)
        fracs = []

    def snapshot(it):
        return _state_dict("joint", it, params, adam, sampler, fake_rng, rows,
                           {"labels": labels.tolist(), "refresh_fracs": fracs, "p": p_all.tolist()})

    good = snapshot(start)
    stop = "max_iter"
    for it in range(start, config.cluster_iters):
        idx = sampler.next()
        real = data.take(idx)
        fake = make_fake_batch(real, fake_rng, config.fake_fraction)
        try:
            params, adam, terms = _step(params, adam, real, fake, config, p_all[idx])
        except gc.NonFiniteError as exc:
            raise TrainingDiverged(f"cluster training diverged at iteration {it}: {exc}", str(exc), good) from exc
        frac = None
        if (it + 1) % config.target_interval == 0:
            _, p_all, new_labels = refresh_targets(params, data, config.dims)
            frac = float(np.mean(new_labels != labels))
            fracs.append(frac)
            labels = new_labels
            log.info("joint %d: label change %.5f, kl %.5f", it, frac, terms["kl"])
        rows.append(_log_row(it, terms, frac))
        good = snapshot(it + 1)
        if frac is not None and frac < config.delta:
            stop = "converged"
            break
    out = TrainedModel(config, params, rows, good, labels=labels, stop_reason=stop, refresh_fracs=fracs)
    return out


@dataclass
class FinalLabels:
    labels: np.ndarray  # k-means on final embeddings, aligned to the cluster-layer indices
    nearest: np.ndarray  # nearest phenotype centre
    nearest_distance: np.ndarray
    argmax_q: np.ndarray  # hard labels of the cluster layer
    centroids: np.ndarray


def finalize_labels(model, cohort, seed=None):
    """k-means on the final embeddings; centres become the assignment phenotypes."""
    seed = model.config.seed if seed is None else seed
    k = model.k or model.config.k
    Z = embed(model.params, _padded(cohort), model.dims)
    fit = kmeans(Z, k, seed=seed, n_init=model.config.n_init)
    if "cluster.mu" in model.params:
        argmax_q = soft_assign(Z, model.params["cluster.mu"]).argmax(axis=1)
    else:
        argmax_q = fit.labels.copy()
    labels, mapping = match_labels(fit.labels, argmax_q, k)
    centroids = np.empty_like(fit.centroids)
    centroids[mapping] = fit.centroids
    nearest, dist = assign_nearest(Z, centroids)
    model.centroids = centroids
    model.labels = labels
    return FinalLabels(labels, nearest, dist, argmax_q, centroids)
