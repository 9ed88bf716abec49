"""Alternating transduction / adaptation training loop and evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from tdadapt.datamodel import Checkpoint, SourceDataset, TargetDataset, check_compatible
from tdadapt.errors import ConfigError, DataFormatError, NumericalError, ShapeError
from tdadapt.features import ARCHITECTURES, DEFAULT_HIDDEN, FeatureFunction, init_params
from tdadapt.metric import Triplets, grad_W, select_triplets, similarity_matrix, triplet_loss
from tdadapt.transduction import LabelAssignment, transduce_features

log = logging.getLogger(__name__)

MAX_EMBEDDING = 128
TRACE_COLUMNS = ("iteration", "loss", "energy", "active_triplets", "skipped_sources")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    margin: float = 0.5
    lam: float = 0.5
    knn_k: int = 4
    learning_rate: float = 2.5e-4
    max_iters: int = 1000
    seed: int = 0
    arch: str = "linear"
    d_out: int | None = None
    d_hidden: int | None = None
    reg_w: float = 1e-4
    label_propagation: bool = True
    feature_learning: bool = True
    adagrad_epsilon: float = 1e-8
    convergence_window: int = 50
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}")
        if self.d_out is not None and self.d_out < 1:
            raise ConfigError("d_out must be positive")
        if self.reg_w < 0 or self.adagrad_epsilon < 0:
            raise ConfigError("reg_w and adagrad_epsilon must be >= 0")
        if self.convergence_window < 1:
            raise ConfigError("convergence_window must be >= 1")

    def resolved(self, d_in: int) -> TrainConfig:
        """Fill in dimensions that depend on the input width.

        ``d_out`` defaults to 128, capped at ``d_in``; precomputed features
        always keep ``d_in``.
        """
        if self.arch == "precomputed":
            if self.d_out not in (None, d_in):
                raise ConfigError("precomputed features require d_out == input width")
            return replace(self, d_out=d_in, d_hidden=0)
        d_out = min(MAX_EMBEDDING, d_in) if self.d_out is None else self.d_out
        d_hidden = (self.d_hidden or DEFAULT_HIDDEN) if self.arch == "mlp1" else 0
        return replace(self, d_out=d_out, d_hidden=d_hidden)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdaGradState:
    accum_W: np.ndarray
    accum_theta: np.ndarray


def adagrad_step(params: np.ndarray, grads: np.ndarray, accum: np.ndarray, learning_rate: float, epsilon: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """One AdaGrad descent step; returns new ``(params, accum)`` without mutating inputs."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    accum = np.asarray(accum, dtype=np.float64)
    if not (params.shape == grads.shape == accum.shape):
        raise ShapeError(f"shape mismatch: params {params.shape}, grads {grads.shape}, accum {accum.shape}")
    accum = accum + grads * grads
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(grads == 0.0, 0.0, grads / (np.sqrt(accum) + epsilon))
    return params - learning_rate * step, accum


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    loss: float
    energy: float
    nn_energy: float
    active_triplets: int
    skipped_sources: int


@dataclass
class TrainReport:
    records: list[TrainRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    converged: bool = False
    final_accuracy: float | None = None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.iteration, f"{r.loss:.6g}", f"{r.energy:.6g}", r.active_triplets, r.skipped_sources])


def initial_checkpoint(cfg: TrainConfig, d_in: int) -> Checkpoint:
    """Identity metric and freshly drawn feature parameters."""
    cfg = cfg.resolved(d_in)
    f = init_params(cfg.arch, d_in, cfg.d_out, cfg.d_hidden or None, seed=cfg.seed)
    d = f.d_out
    return Checkpoint(
        W=np.eye(d),
        features=f,
        accum_W=np.zeros((d, d)),
        accum_theta=np.zeros(f.n_params),
        config=cfg.to_dict(),
        iteration=0,
        seed=cfg.seed,
    )


def _sample(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return rng.choice(n, size=size, replace=size > n)


def _converged(losses: list[float], window: int, tol: float) -> bool:
    if len(losses) < 2 * window:
        return False
    prev = float(np.mean(losses[-2 * window:-window]))
    last = float(np.mean(losses[-window:]))
    return abs(last - prev) <= tol * abs(prev)


@dataclass(frozen=True)
class BatchGradients:
    loss: float
    grad_W: np.ndarray
    grad_theta: np.ndarray
    active: int
    skipped: int


def batch_gradients(
    W: np.ndarray,
    f: FeatureFunction,
    Xs: np.ndarray,
    ys: np.ndarray,
    Xt: np.ndarray,
    tgt_labels: np.ndarray,
    margin: float,
    reg: float,
    with_theta: bool = True,
) -> BatchGradients:
    """Triplet loss and its gradients for one batch under fixed target labels.

    Sources without a valid triplet (label not predicted in the batch, or
    every target predicted with it) are counted in ``skipped`` and add
    nothing to either gradient.
    """
    Fs, Ft = f.forward(Xs), f.forward(Xt)
    S = similarity_matrix(W, Fs, Ft)
    valid, pos, neg = select_triplets(S, ys, tgt_labels)
    anchors = np.flatnonzero(valid)
    triplets = Triplets(anchors, pos[anchors], neg[anchors])
    loss = triplet_loss(W, Fs, Ft, triplets, margin, reg)
    gW = grad_W(W, Fs, Ft, triplets, margin, reg)
    hinge = S[anchors, neg[anchors]] - S[anchors, pos[anchors]] + margin
    act = anchors[hinge > 0.0]
    g_theta = np.zeros(f.n_params)
    if with_theta and f.n_params:
        # upstream gradients w.r.t. each source / target feature row
        Gs = np.zeros_like(Fs)
        Gs[act] = (Ft[neg[act]] - Ft[pos[act]]) @ W.T
        Gt = np.zeros_like(Ft)
        proj = Fs[act] @ W
        np.add.at(Gt, neg[act], proj)
        np.add.at(Gt, pos[act], -proj)
        g_theta = f.vjp(Xs, Gs) + f.vjp(Xt, Gt)
    return BatchGradients(loss, gW, g_theta, int(act.size), int(len(ys) - anchors.size))


def train(
    source: SourceDataset,
    target: TargetDataset,
    cfg: TrainConfig,
    init: Checkpoint | None = None,
) -> tuple[Checkpoint, TrainReport]:
    """Run the alternating loop for up to ``cfg.max_iters`` iterations.

    Each iteration samples a source and a target batch, labels the target
    batch, builds one triplet per source point whose label was predicted in
    the batch (and whose complement is nonempty), and takes an AdaGrad
    descent step on ``W`` and, with feature learning, on ``theta``.
    Target ground truth is never read here.
    """
    check_compatible(source, target)
    cfg = cfg.resolved(source.dim)
    ckpt = init if init is not None else initial_checkpoint(cfg, source.dim)
    if ckpt.features.d_in != source.dim:
        raise ShapeError("checkpoint input width does not match the data")
    report = TrainReport()
    if cfg.max_iters == 0:
        return ckpt, report

    B = cfg.batch_size
    for name, n in (("source", source.n), ("target", target.n)):
        if B > n:
            msg = f"batch size {B} exceeds {name} size {n}; sampling with replacement"
            log.warning(msg)
            report.warnings.append(msg)

    rng = np.random.default_rng([cfg.seed, 1])
    W = ckpt.W.copy()
    f = ckpt.features
    theta = f.theta.copy()
    state = AdaGradState(ckpt.accum_W.copy(), ckpt.accum_theta.copy())
    learn_theta = cfg.feature_learning and f.n_params > 0
    Xs_all, ys_all, Xt_all = source.points, source.labels, target.points
    losses: list[float] = []
    iteration = ckpt.iteration

    for _ in range(cfg.max_iters):
        iteration += 1
        si = _sample(rng, source.n, B)
        ti = _sample(rng, target.n, B)
        Xs, ys, Xt = Xs_all[si], ys_all[si], Xt_all[ti]
        Fs, Ft = f.forward(Xs), f.forward(Xt)

        _, nn, final = transduce_features(
            W, Fs, ys, Ft, source.class_count, cfg.knn_k, cfg.lam, cfg.label_propagation
        )
        g = batch_gradients(W, f, Xs, ys, Xt, final.labels, cfg.margin, cfg.reg_w, learn_theta)
        if not np.isfinite(g.loss):
            raise NumericalError(f"non-finite loss at iteration {iteration}")

        W, state.accum_W = adagrad_step(W, g.grad_W, state.accum_W, cfg.learning_rate, cfg.adagrad_epsilon)
        if learn_theta:
            theta, state.accum_theta = adagrad_step(theta, g.grad_theta, state.accum_theta, cfg.learning_rate, cfg.adagrad_epsilon)
            f = f.with_theta(theta)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(theta))):
            raise NumericalError(f"non-finite parameters at iteration {iteration}")

        report.records.append(TrainRecord(
            iteration, g.loss, final.energy, nn.energy, g.active, g.skipped
        ))
        losses.append(g.loss)
        if _converged(losses, cfg.convergence_window, cfg.convergence_tol):
            report.converged = True
            break

    out = Checkpoint(W, f, state.accum_W, state.accum_theta, cfg.to_dict(), iteration, cfg.seed)
    return out, report


def _model_settings(ckpt: Checkpoint, k: int | None, lam: float | None) -> tuple[int, float]:
    k = int(ckpt.config.get("knn_k", 4)) if k is None else k
    lam = float(ckpt.config.get("lam", 0.5)) if lam is None else lam
    return k, lam


def predict(
    ckpt: Checkpoint,
    source: SourceDataset,
    target_points: np.ndarray,
    mode: str = "propagated",
    k: int | None = None,
    lam: float | None = None,
) -> LabelAssignment:
    """Label every target point using the full source set."""
    if mode not in ("nn", "propagated"):
        raise ConfigError("mode must be 'nn' or 'propagated'")
    f = ckpt.features
    if f.d_in != source.dim or np.shape(target_points)[1] != source.dim:
        raise ShapeError("checkpoint, source and target widths disagree")
    k, lam = _model_settings(ckpt, k, lam)
    _, nn, final = transduce_features(
        ckpt.W, f.forward(source.points), source.labels, f.forward(np.asarray(target_points)),
        source.class_count, k, lam, propagate=(mode == "propagated"),
    )
    return final if mode == "propagated" else nn


def accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ShapeError("prediction and ground truth lengths differ")
    return float(np.mean(predicted == truth))


def evaluate(
    ckpt: Checkpoint,
    source: SourceDataset,
    target: TargetDataset,
    mode: str = "propagated",
    k: int | None = None,
    lam: float | None = None,
) -> float:
    """Fraction of target points labeled correctly (fully transductive)."""
    if not target.has_ground_truth:
        raise DataFormatError("evaluation needs target ground-truth labels")
    check_compatible(source, target)
    truth = target.evaluation_labels()
    if truth.max() >= source.class_count:
        raise DataFormatError(f"target ground truth exceeds class count {source.class_count}")
    pred = predict(ckpt, source, target.points, mode, k, lam)
    return accuracy(pred.labels, truth)
