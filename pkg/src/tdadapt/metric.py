"""Asymmetric bilinear similarity and the triplet hinge loss over it.

Source features index the rows of ``W`` and target features its columns:
``s_W(src, tgt) = phi_src^T W phi_tgt``. ``W`` need not be symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from tdadapt.errors import ShapeError

COSINE_EPS = 1e-12


def _square(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"metric matrix must be square, got {W.shape}")
    return W


def similarity(W: np.ndarray, phi_src: np.ndarray, phi_tgt: np.ndarray) -> float:
    W = _square(W)
    a = np.asarray(phi_src, dtype=np.float64)
    b = np.asarray(phi_tgt, dtype=np.float64)
    if a.shape != (W.shape[0],) or b.shape != (W.shape[1],):
        raise ShapeError(f"features {a.shape}, {b.shape} do not match W {W.shape}")
    return float(a @ W @ b)


def similarity_matrix(W: np.ndarray, src_feats: np.ndarray, tgt_feats: np.ndarray) -> np.ndarray:
    """``S[i, j] = s_W(src_i, tgt_j)``."""
    W = _square(W)
    src = np.atleast_2d(np.asarray(src_feats, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(tgt_feats, dtype=np.float64))
    if src.shape[1] != W.shape[0] or tgt.shape[1] != W.shape[1]:
        raise ShapeError(f"feature widths {src.shape[1]}, {tgt.shape[1]} do not match W {W.shape}")
    return src @ W @ tgt.T


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has norm below 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine of mismatched shapes {a.shape}, {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < COSINE_EPS or nb < COSINE_EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(X: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows; zero rows give 0 everywhere."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    ok = norms >= COSINE_EPS
    U = np.zeros_like(X)
    U[ok] = X[ok] / norms[ok, None]
    return np.clip(U @ U.T, -1.0, 1.0)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    margin_violation: float


class Triplets(NamedTuple):
    """Index arrays for a batch of triplets (anchor rows into the source batch)."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def select_triplets(S: np.ndarray, src_labels: np.ndarray, tgt_labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hardest positive/negative target for every source row of ``S``.

    Returns ``(valid, pos, neg)``: ``valid[i]`` is False when source ``i`` has
    no target predicted with its label or no target predicted otherwise.
    Ties go to the lowest target index.
    """
    S = np.asarray(S, dtype=np.float64)
    src_labels = np.asarray(src_labels)
    tgt_labels = np.asarray(tgt_labels)
    if S.shape != (src_labels.size, tgt_labels.size):
        raise ShapeError(f"similarity matrix {S.shape} does not match label counts")
    same = src_labels[:, None] == tgt_labels[None, :]
    valid = same.any(axis=1) & (~same).any(axis=1)
    pos = np.where(same, S, -np.inf).argmax(axis=1)
    neg = np.where(same, -np.inf, S).argmax(axis=1)
    return valid, pos, neg


def select_triplet(
    anchor: int,
    src_feat: np.ndarray,
    src_label: int,
    tgt_feats: np.ndarray,
    tgt_labels: np.ndarray,
    W: np.ndarray,
    margin: float = 0.0,
) -> Triplet | None:
    """Pick the most similar same-label and different-label targets for one source point.

    ``margin_violation`` is ``s_neg - s_pos + margin``; returns None when either
    candidate set is empty.
    """
    s = similarity_matrix(W, np.asarray(src_feat)[None, :], tgt_feats)
    valid, pos, neg = select_triplets(s, np.array([src_label]), tgt_labels)
    if not valid[0]:
        return None
    p, q = int(pos[0]), int(neg[0])
    return Triplet(anchor, p, q, float(s[0, q] - s[0, p] + margin))


def _as_arrays(triplets) -> Triplets:
    if isinstance(triplets, Triplets):
        return Triplets(*(np.asarray(a, dtype=np.int64) for a in triplets))
    triplets = list(triplets)
    return Triplets(
        np.array([t.anchor for t in triplets], dtype=np.int64),
        np.array([t.positive for t in triplets], dtype=np.int64),
        np.array([t.negative for t in triplets], dtype=np.int64),
    )


def hinge_terms(W, src_feats, tgt_feats, triplets, margin: float) -> np.ndarray:
    """Per-triplet ``s_neg - s_pos + margin`` (before rectification)."""
    W = _square(W)
    t = _as_arrays(triplets)
    src = np.asarray(src_feats, dtype=np.float64)[t.anchor]
    proj = src @ W
    tgt = np.asarray(tgt_feats, dtype=np.float64)
    s_pos = np.einsum("ij,ij->i", proj, tgt[t.positive])
    s_neg = np.einsum("ij,ij->i", proj, tgt[t.negative])
    return s_neg - s_pos + margin


def triplet_loss(
    W: np.ndarray,
    src_feats: np.ndarray,
    tgt_feats: np.ndarray,
    triplets: Triplets | Sequence[Triplet],
    margin: float = 0.5,
    reg: float = 1e-4,
) -> float:
    """Sum of rectified hinge terms plus ``reg * 0.5 * ||W||_F^2``."""
    W = _square(W)
    h = hinge_terms(W, src_feats, tgt_feats, triplets, margin)
    return float(np.maximum(h, 0.0).sum() + 0.5 * reg * np.sum(W * W))


def grad_W(
    W: np.ndarray,
    src_feats: np.ndarray,
    tgt_feats: np.ndarray,
    triplets: Triplets | Sequence[Triplet],
    margin: float = 0.5,
    reg: float = 1e-4,
) -> np.ndarray:
    """Subgradient of :func:`triplet_loss` with respect to ``W``.

    A triplet is active when its hinge term is strictly positive; active
    triplets add ``phi_src (phi_neg - phi_pos)^T``.
    """
    W = _square(W)
    t = _as_arrays(triplets)
    active = hinge_terms(W, src_feats, tgt_feats, t, margin) > 0.0
    src = np.asarray(src_feats, dtype=np.float64)[t.anchor[active]]
    tgt = np.asarray(tgt_feats, dtype=np.float64)
    diff = tgt[t.negative[active]] - tgt[t.positive[active]]
    return src.T @ diff + reg * W
