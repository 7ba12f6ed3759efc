"""Dense routines for the KCL witness: null space, Jacobi eigenvalues, norms."""

from __future__ import annotations

import math

import numpy as np


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(math.sqrt(float((a * a).sum())))


def null_space_vector(a) -> np.ndarray | None:
    """Unit vector w with A^T w = 0 for a d x n matrix A, or None if rank(A) = d.

    Row-reduces A^T (n x d) with partial pivoting. Pivots below
    1e-10 * ||A||_F are treated as zero; the first free column yields w.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    d, n = a.shape
    scale = frobenius_norm(a)
    if scale == 0.0:
        w = np.zeros(d)
        w[0] = 1.0
        return w
    tol = 1e-10 * scale
    m = a.T.copy()  # n x d
    pivots: list[int] = []
    row = 0
    for col in range(d):
        if row == n:
            break
        p = row + int(np.argmax(np.abs(m[row:, col])))
        if abs(m[p, col]) <= tol:
            m[row:, col] = 0.0
            continue
        if p != row:
            m[[row, p]] = m[[p, row]]
        m[row] /= m[row, col]
        others = [r for r in range(n) if r != row]
        if others:
            m[others] -= np.outer(m[others, col], m[row])
        pivots.append(col)
        row += 1
    free = [c for c in range(d) if c not in set(pivots)]
    if not free:
        return None
    f = free[0]
    w = np.zeros(d)
    w[f] = 1.0
    for r, pc in enumerate(pivots):
        w[pc] = -m[r, f]
    w /= np.linalg.norm(w)
    return w


def jacobi_eigenvalues(s, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most
    tol * max(1, ||S||_F).
    """
    a = np.array(s, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("expected a square matrix")
    a = 0.5 * (a + a.T)
    limit = tol * max(1.0, frobenius_norm(a))

    def off(m):
        return math.sqrt(max(float((m * m).sum() - (np.diag(m) ** 2).sum()), 0.0))

    for _ in range(max_sweeps):
        if off(a) <= limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                diff = float(a[q, q] - a[p, p])
                if abs(apq) <= 1e-150 * abs(diff):
                    t = apq / diff  # small-angle limit, avoids overflow in theta^2
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s_ = t * c
                rp, rq = a[p].copy(), a[q].copy()
                a[p], a[q] = c * rp - s_ * rq, s_ * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * cp - s_ * cq, s_ * cp + c * cq
                a[p, q] = a[q, p] = 0.0
    return np.sort(np.diag(a))


def smallest_singular_value(a) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    eig = jacobi_eigenvalues(a.T @ a)
    return math.sqrt(max(float(eig[0]), 0.0))
