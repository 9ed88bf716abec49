"""Target labeling by Potts energy minimization.

The energy of a labeling ``y`` of ``n`` target points is

    E(y) = sum_i unary[i, y_i] + sum_{(i,j) in edges} pairwise_ij * [y_i != y_j]

with ``unary[i, c] = -max_{source j of class c} s_W(src_j, tgt_i)`` and
``pairwise_ij = lam * cosine_ij`` on the symmetrized k-NN graph. Labelings
start from the nearest-neighbour rule and are refined with alpha-beta swap
moves, each solved exactly by a min-cut.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from tdadapt.errors import ConfigError, DomainError, NumericalError, ShapeError
from tdadapt.features import FeatureFunction
from tdadapt.graph import DEFAULT_K, KnnGraph, build_knn
from tdadapt.maxflow import min_cut
from tdadapt.metric import similarity_matrix

DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Unary table (``inf`` for inadmissible classes) plus Potts edge weights."""

    unary: np.ndarray
    edges: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        unary = np.asarray(self.unary, dtype=np.float64)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        pairwise = np.asarray(self.pairwise, dtype=np.float64)
        if unary.ndim != 2:
            raise ShapeError("unary table must be n x K")
        if pairwise.shape != (edges.shape[0],):
            raise ShapeError("one pairwise weight per edge required")
        if edges.size and (edges.min() < 0 or edges.max() >= unary.shape[0]):
            raise ShapeError("edge endpoint out of range")
        if not np.all(np.isfinite(pairwise)):
            raise ConfigError("pairwise weights must be finite")
        admissible = np.all(np.isfinite(unary), axis=0)
        if not admissible.any():
            raise ConfigError("energy model has no admissible class")
        if np.isnan(unary).any() or not np.all(np.isinf(unary[:, ~admissible])):
            raise ConfigError("unary entries must be finite for admissible classes and +inf otherwise")
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "pairwise", pairwise)

    @property
    def n(self) -> int:
        return self.unary.shape[0]

    @property
    def class_count(self) -> int:
        return self.unary.shape[1]

    @property
    def classes(self) -> np.ndarray:
        """Admissible class ids, ascending."""
        return np.flatnonzero(np.all(np.isfinite(self.unary), axis=0))


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    labels: np.ndarray
    energy: float


def build_energy_model(
    W: np.ndarray,
    src_feats: np.ndarray,
    src_labels: np.ndarray,
    tgt_feats: np.ndarray,
    graph: KnnGraph | None,
    lam: float,
    class_count: int,
) -> EnergyModel:
    """Classes with no source point among ``src_labels`` become inadmissible."""
    if lam < 0:
        raise ConfigError("consistency weight lambda must be >= 0")
    src_labels = np.asarray(src_labels, dtype=np.int64)
    S = similarity_matrix(W, src_feats, tgt_feats)
    if not np.all(np.isfinite(S)):
        raise NumericalError("non-finite similarity")
    unary = np.full((S.shape[1], class_count), np.inf)
    for c in np.unique(src_labels):
        unary[:, c] = -S[src_labels == c].max(axis=0)
    if graph is None:
        edges, pairwise = np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    else:
        if graph.n != S.shape[1]:
            raise ShapeError(f"graph has {graph.n} nodes but there are {S.shape[1]} targets")
        edges, pairwise = graph.edges, lam * graph.weights
    return EnergyModel(unary, edges, pairwise)


def energy(model: EnergyModel, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.shape != (model.n,):
        raise ShapeError(f"expected {model.n} labels, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= model.class_count):
        raise DomainError("label outside 0..K-1")
    u = model.unary[np.arange(model.n), labels]
    if not np.all(np.isfinite(u)):
        raise DomainError(f"labels use an inadmissible class (admissible: {model.classes.tolist()})")
    e0, e1 = model.edges[:, 0], model.edges[:, 1]
    return float(u.sum() + model.pairwise[labels[e0] != labels[e1]].sum())


def nn_rule(
    W: np.ndarray,
    src_feats: np.ndarray,
    src_labels: np.ndarray,
    tgt_feats: np.ndarray,
    model: EnergyModel | None = None,
) -> LabelAssignment:
    """Give each target the label of its most similar source (ties: lowest source index).

    The returned energy is taken under ``model`` when supplied, otherwise
    under the unary-only model.
    """
    src_labels = np.asarray(src_labels, dtype=np.int64)
    S = similarity_matrix(W, src_feats, tgt_feats)
    if S.shape[0] != src_labels.size:
        raise ShapeError("one label per source point required")
    best = S.argmax(axis=0)
    labels = src_labels[best]
    if model is None:
        e = float(-S[best, np.arange(S.shape[1])].sum())
    else:
        e = energy(model, labels)
    return LabelAssignment(labels, e)


def swap_move(model: EnergyModel, labels: np.ndarray, alpha: int, beta: int) -> tuple[np.ndarray, float]:
    """Optimal alpha-beta swap from ``labels``.

    Nodes labeled ``alpha`` or ``beta`` may exchange between the two labels;
    everyone else stays fixed. Returns the new labeling and its restricted
    energy: unaries of the moving nodes plus edges between two moving nodes.
    Edges to fixed nodes cost the same under either label and are left out.
    Ties keep nodes at ``alpha``.
    """
    labels = np.asarray(labels)
    moving = np.flatnonzero((labels == alpha) | (labels == beta))
    if moving.size == 0:
        return labels.copy(), 0.0
    local = np.full(model.n, -1)
    local[moving] = np.arange(moving.size)
    e0, e1 = model.edges[:, 0], model.edges[:, 1]
    inner = (local[e0] >= 0) & (local[e1] >= 0)
    cost_a = model.unary[moving, alpha]
    cost_b = model.unary[moving, beta]
    offset = np.minimum(cost_a, cost_b)
    # source side = alpha: cutting s->i pays beta's cost, cutting i->t pays alpha's
    cut, sink_side = min_cut(
        cost_b - offset,
        cost_a - offset,
        np.stack([local[e0[inner]], local[e1[inner]]], axis=1),
        model.pairwise[inner],
    )
    new = labels.copy()
    new[moving] = np.where(sink_side, beta, alpha)
    return new, cut + float(offset.sum())


def alpha_beta_swap(model: EnergyModel, init: LabelAssignment | np.ndarray) -> LabelAssignment:
    """Sweep over class pairs in ascending order until no swap lowers the energy."""
    if model.pairwise.size and model.pairwise.min() < 0:
        raise ConfigError("alpha-beta swap requires nonnegative pairwise weights")
    labels = np.array(init.labels if isinstance(init, LabelAssignment) else init, dtype=np.int64)
    current = energy(model, labels)
    improved = True
    while improved:
        improved = False
        for a, b in combinations(model.classes.tolist(), 2):
            candidate, _ = swap_move(model, labels, a, b)
            e = energy(model, candidate)
            if e < current - 1e-12 * max(1.0, abs(current)):
                labels, current = candidate, e
                improved = True
    return LabelAssignment(labels, current)


def transduce_features(
    W: np.ndarray,
    src_feats: np.ndarray,
    src_labels: np.ndarray,
    tgt_feats: np.ndarray,
    class_count: int,
    k: int = DEFAULT_K,
    lam: float = DEFAULT_LAMBDA,
    propagate: bool = True,
) -> tuple[EnergyModel, LabelAssignment, LabelAssignment]:
    """Label features directly; returns ``(model, nn_assignment, final_assignment)``."""
    graph = build_knn(tgt_feats, k) if tgt_feats.shape[0] >= 2 else None
    model = build_energy_model(W, src_feats, src_labels, tgt_feats, graph, lam, class_count)
    init = nn_rule(W, src_feats, src_labels, tgt_feats, model)
    final = alpha_beta_swap(model, init) if propagate else init
    return model, init, final


def transduce_batch(
    W: np.ndarray,
    features: FeatureFunction,
    src_points: np.ndarray,
    src_labels: np.ndarray,
    tgt_points: np.ndarray,
    k: int = DEFAULT_K,
    lam: float = DEFAULT_LAMBDA,
    propagation_enabled: bool = True,
    class_count: int | None = None,
) -> LabelAssignment:
    src_labels = np.asarray(src_labels, dtype=np.int64)
    if class_count is None:
        class_count = int(src_labels.max()) + 1
    _, _, final = transduce_features(
        W, features.forward(np.atleast_2d(src_points)), src_labels,
        features.forward(np.atleast_2d(tgt_points)), class_count, k, lam, propagation_enabled,
    )
    return final
