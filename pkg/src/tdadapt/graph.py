"""Cosine k-NN graph over a batch of target features."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tdadapt.errors import ConfigError
from tdadapt.metric import cosine_matrix

DEFAULT_K = 4
TIE_DECIMALS = 12


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Undirected k-NN graph.

    ``edges`` is an ``(m, 2)`` array with ``i < j`` per row, sorted
    lexicographically; ``weights`` holds the matching cosine weights,
    clamped at 0. ``directed`` keeps each node's own top-k list.
    """

    n: int
    k: int
    edges: np.ndarray
    weights: np.ndarray
    directed: tuple[np.ndarray, ...]

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Undirected neighbors of ``i`` and their weights, by descending weight then index."""
        hit_a = self.edges[:, 0] == i
        hit_b = self.edges[:, 1] == i
        nb = np.concatenate([self.edges[hit_a, 1], self.edges[hit_b, 0]])
        w = np.concatenate([self.weights[hit_a], self.weights[hit_b]])
        order = np.lexsort((nb, -w))
        return nb[order], w[order]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def write_edge_list(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (i, j), w in zip(self.edges, self.weights):
                fh.write(f"{i} {j} {w:.6g}\n")


def build_knn(features: np.ndarray, k: int = DEFAULT_K) -> KnnGraph:
    """Link each node to its ``k`` highest-cosine peers, then symmetrize.

    ``k`` is truncated to ``n - 1``. Cosines are ranked after rounding to
    12 decimals, so values equal up to roundoff tie, and ties prefer the
    lower index. Negative cosines are clamped to 0 so that every pairwise
    penalty is nonnegative.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = X.shape[0]
    if n < 2:
        empty = np.zeros((0, 2), dtype=np.int64)
        return KnnGraph(n, 0, empty, np.zeros(0), tuple(np.zeros(0, dtype=np.int64) for _ in range(n)))
    k = min(k, n - 1)
    C = cosine_matrix(X)
    # stable sort on -cos keeps the lowest index first among equal cosines
    key = -np.round(C, TIE_DECIMALS)
    np.fill_diagonal(key, np.inf)
    order = np.argsort(key, axis=1, kind="stable")[:, :k]

    rows = np.repeat(np.arange(n), k)
    cols = order.ravel()
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0)
    weights = np.maximum(C[pairs[:, 0], pairs[:, 1]], 0.0)
    return KnnGraph(n, k, pairs.astype(np.int64), weights, tuple(order))
