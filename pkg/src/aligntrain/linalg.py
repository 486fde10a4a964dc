"""Dense float64 matrix/vector helpers shared across the package.

Matrices are 2-D row-major numpy arrays, vectors are 1-D. All functions are
pure and never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray
Vector = np.ndarray


def as_matrix(values) -> Matrix:
    """Coerce to a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def l2_normalize_rows(m: Matrix) -> Matrix:
    """Scale every row to unit Euclidean norm."""
    m = as_matrix(m)
    norms = np.sqrt((m * m).sum(axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize zero-norm row {int(zero[0])}")
    return m / norms[:, None]


def softmax(v: Vector, temperature: float) -> Vector:
    """Temperature-scaled softmax with max-subtraction for overflow safety."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(v, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def mean_variance(values: Vector) -> tuple[float, float]:
    """Mean and population (divide-by-n) variance of a non-empty vector."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("mean_variance of empty input")
    mean = float(x.mean())
    var = float(((x - mean) ** 2).mean())
    return mean, var


def entropy(p: Vector) -> float:
    """Shannon entropy -sum(p ln p) in nats, with 0 ln 0 := 0.

    Entries must be non-negative and sum to 1 within 1e-8.
    """
    q = np.asarray(p, dtype=np.float64)
    if (q < 0).any():
        raise ValueError("entropy: negative probability entry")
    total = float(q.sum())
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"entropy: probabilities sum to {total!r}, not 1")
    pos = q[q > 0]
    return float(-(pos * np.log(pos)).sum())


def pca_project_2d(m: Matrix) -> tuple[Matrix, bool]:
    """Project rows onto the top-2 principal components of the centered data.

    Returns ``(coords, degenerate)``. Each component's sign is fixed so its
    largest-magnitude loading is positive. When the centered data has rank < 2
    the second coordinate column is zeroed and ``degenerate`` is True.
    """
    m = as_matrix(m)
    n, d = m.shape
    if n < 2 or d < 2:
        raise ValueError(f"pca_project_2d needs at least 2 rows and 2 cols, got {m.shape}")
    centered = m - m.mean(axis=0)
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)  # ascending order
    lam1, lam2 = float(evals[-1]), float(evals[-2])
    comps = []
    for k in (-1, -2):
        v = evecs[:, k]
        peak = int(np.argmax(np.abs(v)))
        if v[peak] < 0:
            v = -v
        comps.append(v)
    coords = centered @ np.column_stack(comps)
    degenerate = lam2 <= 1e-12 * max(lam1, 1.0)
    if degenerate:
        coords[:, 1] = 0.0
    return coords, degenerate
