"""Independent reference implementations used as test oracles.

Everything here is written from the definitions (loops, extended precision,
full sorts) and stays independent of the library code paths it checks.
"""

import math

import mpmath
import numpy as np


def matmul_triple_loop(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def jacobi_eigenvalues(sym, max_sweeps=100, tol=1e-14):
    """Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, sorted
    in descending order."""
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p, q]))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 if theta == 0.0 else math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(theta * theta + 1.0)
                )
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k in (p, q):
                        continue
                    akp, akq = a[k, p], a[k, q]
                    a[k, p] = a[p, k] = c * akp - s * akq
                    a[k, q] = a[q, k] = s * akp + c * akq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
    return sorted(np.diag(a).tolist(), reverse=True)


def infonce_direct(s, tau, dps=50):
    """Direct exp/sum/log evaluation of both loss components in extended
    precision; returns (l_i2t, l_t2i) rounded to float64."""
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    with mpmath.workdps(dps):
        mp_tau = mpmath.mpf(tau)
        total_rows = mpmath.mpf(0)
        total_cols = mpmath.mpf(0)
        for i in range(n):
            row_den = sum(mpmath.exp(mpmath.mpf(s[i, j]) / mp_tau) for j in range(n))
            col_den = sum(mpmath.exp(mpmath.mpf(s[j, i]) / mp_tau) for j in range(n))
            pos = mpmath.exp(mpmath.mpf(s[i, i]) / mp_tau)
            total_rows += -mpmath.log(pos / row_den)
            total_cols += -mpmath.log(pos / col_den)
        return float(total_rows / n), float(total_cols / n)


def sort_based_recall(s, ks):
    """Recall@K from full sorts of each row/column; ties rank lower indices
    first. Returns {(direction, k): percent}."""
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    ranks_i2t = []
    ranks_t2i = []
    for i in range(n):
        row_order = sorted(range(n), key=lambda j: (-s[i, j], j))
        ranks_i2t.append(row_order.index(i) + 1)
        col_order = sorted(range(n), key=lambda j: (-s[j, i], j))
        ranks_t2i.append(col_order.index(i) + 1)
    out = {}
    for k in ks:
        out[("i2t", k)] = 100.0 * sum(r <= k for r in ranks_i2t) / n
        out[("t2i", k)] = 100.0 * sum(r <= k for r in ranks_t2i) / n
    return out


def adam_scalar(grad_fn, x0, lr, beta1=0.9, beta2=0.999, eps=1e-8, steps=100):
    """Pure-Python per-coordinate Adam on a list of floats."""
    x = list(x0)
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    history = [list(x)]
    for t in range(1, steps + 1):
        g = grad_fn(x)
        for i in range(len(x)):
            m[i] = beta1 * m[i] + (1 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i]
            m_hat = m[i] / (1 - beta1**t)
            v_hat = v[i] / (1 - beta2**t)
            x[i] = x[i] - lr * m_hat / (math.sqrt(v_hat) + eps)
        history.append(list(x))
    return x, history
