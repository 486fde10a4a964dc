"""Symmetric contrastive objective over a batch similarity matrix.

The loss splits into an image-to-text term (row softmax against the diagonal)
and a text-to-image term (column softmax), each a mean over the batch. The
two terms are combined with the scheduler's convex weight pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .linalg import Matrix, as_matrix

if TYPE_CHECKING:
    from .scheduler import LossWeights


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise scores s[i, j] = sim(image_i, text_j) with temperature tau."""

    s: Matrix
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "s", as_matrix(self.s))
        if self.s.shape[0] != self.s.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {self.s.shape}")
        if self.s.shape[0] < 1:
            raise ValueError("similarity matrix must be non-empty")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    l_i2t: float
    l_t2i: float
    total: float
    w_i: float
    w_t: float


def similarity_matrix(emb_img: Matrix, emb_txt: Matrix, tau: float) -> SimilarityMatrix:
    """Cosine similarities of row-normalized embeddings: emb_img @ emb_txt.T."""
    emb_img = as_matrix(emb_img)
    emb_txt = as_matrix(emb_txt)
    if emb_img.shape != emb_txt.shape:
        raise ValueError(f"embedding shapes differ: {emb_img.shape} vs {emb_txt.shape}")
    if emb_img.shape[0] == 0:
        raise ValueError("cannot build a similarity matrix from an empty batch")
    return SimilarityMatrix(emb_img @ emb_txt.T, tau)


def log_softmax_rows(z: Matrix) -> Matrix:
    """Row-wise log softmax with log-sum-exp stabilization."""
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    return z - lse


def infonce_components(sim: SimilarityMatrix) -> tuple[float, float]:
    """Per-direction contrastive losses, each a mean over the batch.

    Returns (l_i2t, l_t2i): negative mean diagonal log-probability under the
    row softmax and the column softmax of s/tau respectively.
    """
    z = sim.s / sim.tau
    l_i2t = float(-np.diag(log_softmax_rows(z)).mean())
    l_t2i = float(-np.diag(log_softmax_rows(z.T)).mean())
    return l_i2t, l_t2i


def weighted_total(l_i2t: float, l_t2i: float, weights: "LossWeights") -> LossBreakdown:
    total = weights.w_i * l_i2t + weights.w_t * l_t2i
    return LossBreakdown(float(l_i2t), float(l_t2i), float(total), weights.w_i, weights.w_t)


def loss_gradient(sim: SimilarityMatrix, weights: "LossWeights") -> Matrix:
    """Gradient of the weighted total loss w.r.t. each similarity entry.

    d_s[i][j] = w_i*(p_row(i,j) - delta_ij)/(N tau) + w_t*(p_col(i,j) - delta_ij)/(N tau)
    where p_row is the row softmax and p_col the column softmax of s/tau.
    """
    z = sim.s / sim.tau
    p_rows = np.exp(log_softmax_rows(z))
    p_cols = np.exp(log_softmax_rows(z.T)).T
    eye = np.eye(sim.n)
    return (weights.w_i * (p_rows - eye) + weights.w_t * (p_cols - eye)) / (sim.n * sim.tau)


def chain_to_embeddings(d_s: Matrix, emb_img: Matrix, emb_txt: Matrix) -> tuple[Matrix, Matrix]:
    """Chain a similarity gradient into gradients on the two embedding blocks."""
    return d_s @ emb_txt, d_s.T @ emb_img
