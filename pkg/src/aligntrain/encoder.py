"""Dual linear projection heads over frozen raw features.

Raw image and text feature vectors are mapped into a shared d-dimensional
space by one projection matrix per modality, then L2-normalized so cosine
similarity is a plain dot product. Gradients through the projection and the
normalization are analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import Matrix, as_matrix

# Rows whose projection falls below this norm cannot be normalized meaningfully.
DEGENERATE_NORM = 1e-30


@dataclass
class DualEncoderParams:
    """Projection weights; a raw row x maps to w @ x (stored as x @ w.T)."""

    w_img: Matrix  # (d, d_img)
    w_txt: Matrix  # (d, d_txt)

    def __post_init__(self):
        self.w_img = as_matrix(self.w_img)
        self.w_txt = as_matrix(self.w_txt)
        if self.w_img.shape[0] != self.w_txt.shape[0]:
            raise ValueError("w_img and w_txt disagree on embedding dimension")
        if self.embed_dim < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {self.embed_dim}")
        if not (np.isfinite(self.w_img).all() and np.isfinite(self.w_txt).all()):
            raise ValueError("projection weights contain non-finite entries")

    @property
    def embed_dim(self) -> int:
        return self.w_img.shape[0]

    @property
    def d_img(self) -> int:
        return self.w_img.shape[1]

    @property
    def d_txt(self) -> int:
        return self.w_txt.shape[1]

    def copy(self) -> "DualEncoderParams":
        return DualEncoderParams(self.w_img.copy(), self.w_txt.copy())


@dataclass
class EncoderGradients:
    g_img: Matrix  # same shape as w_img
    g_txt: Matrix  # same shape as w_txt


def init_params(d: int, d_img: int, d_txt: int, seed: int) -> DualEncoderParams:
    """Xavier-uniform initialization, bit-deterministic per seed.

    Entries are uniform on [-b, b] with b = sqrt(6 / (fan_in + fan_out)).
    """
    if d < 2:
        raise ValueError(f"embedding dimension must be >= 2, got {d}")
    if d_img < 1 or d_txt < 1:
        raise ValueError("raw feature dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def draw(fan_in: int) -> Matrix:
        bound = math.sqrt(6.0 / (fan_in + d))
        return rng.uniform(-bound, bound, size=(d, fan_in))

    return DualEncoderParams(draw(d_img), draw(d_txt))


def _project(w: Matrix, raw: Matrix, side: str) -> tuple[Matrix, np.ndarray]:
    z = raw @ w.T
    norms = np.sqrt((z * z).sum(axis=1))
    bad = np.flatnonzero(norms < DEGENERATE_NORM)
    if bad.size:
        raise ValueError(f"{side} row {int(bad[0])} projects to a zero vector")
    return z, norms


def embed(params: DualEncoderParams, raw_img: Matrix, raw_txt: Matrix) -> tuple[Matrix, Matrix]:
    """Project and row-normalize a paired batch of raw feature vectors."""
    raw_img = as_matrix(raw_img)
    raw_txt = as_matrix(raw_txt)
    if raw_img.shape[1] != params.d_img:
        raise ValueError(f"raw image width {raw_img.shape[1]} != {params.d_img}")
    if raw_txt.shape[1] != params.d_txt:
        raise ValueError(f"raw text width {raw_txt.shape[1]} != {params.d_txt}")
    if raw_img.shape[0] != raw_txt.shape[0]:
        raise ValueError("image and text batches must pair up row for row")
    z_img, n_img = _project(params.w_img, raw_img, "image")
    z_txt, n_txt = _project(params.w_txt, raw_txt, "text")
    return z_img / n_img[:, None], z_txt / n_txt[:, None]


def _backward_side(w: Matrix, raw: Matrix, upstream: Matrix, side: str) -> Matrix:
    # d(z/|z|)/dz = (I - zhat zhat^T) / |z|: project upstream onto the
    # tangent space of the unit sphere, then push through the linear map.
    z, norms = _project(w, raw, side)
    zhat = z / norms[:, None]
    radial = (upstream * zhat).sum(axis=1, keepdims=True)
    dz = (upstream - radial * zhat) / norms[:, None]
    return dz.T @ raw


def backward(
    params: DualEncoderParams,
    raw_img: Matrix,
    raw_txt: Matrix,
    d_emb_img: Matrix,
    d_emb_txt: Matrix,
) -> EncoderGradients:
    """Gradient of the loss w.r.t. both projection matrices.

    ``d_emb_img`` / ``d_emb_txt`` are the upstream gradients on the normalized
    embeddings returned by :func:`embed`.
    """
    raw_img = as_matrix(raw_img)
    raw_txt = as_matrix(raw_txt)
    d_emb_img = as_matrix(d_emb_img)
    d_emb_txt = as_matrix(d_emb_txt)
    if d_emb_img.shape != (raw_img.shape[0], params.embed_dim):
        raise ValueError("image upstream gradient shape mismatch")
    if d_emb_txt.shape != (raw_txt.shape[0], params.embed_dim):
        raise ValueError("text upstream gradient shape mismatch")
    g_img = _backward_side(params.w_img, raw_img, d_emb_img, "image")
    g_txt = _backward_side(params.w_txt, raw_txt, d_emb_txt, "text")
    return EncoderGradients(g_img, g_txt)
