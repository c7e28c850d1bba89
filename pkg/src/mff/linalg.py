"""Cyclic Jacobi eigensolver for small dense symmetric matrices."""
from __future__ import annotations

import numpy as np


class EigenConvergenceError(RuntimeError):
    pass


def jacobi_eigh(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ascending eigenvalues ``w`` and orthonormal eigenvectors as the
    columns of ``V`` so that ``A = V diag(w) V^T``.
    """
    a = np.array(A, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.abs(a).max()
    if n == 1 or scale == 0.0:
        return np.diag(a).copy(), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- R^T A R with R the (p, q) rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off > tol * scale:
            raise EigenConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off-norm {off:.3g})")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def jacobi_eigvalsh(A: np.ndarray, **kw) -> np.ndarray:
    return jacobi_eigh(A, **kw)[0]


def min_eigenvalue(A: np.ndarray) -> float:
    return float(jacobi_eigvalsh(A)[0])


def psd_expm_neg(H: np.ndarray, tau: float) -> np.ndarray:
    """exp(-tau * H_+) where H_+ clips negative eigenvalues of H to zero."""
    w, V = jacobi_eigh(H)
    w = np.maximum(w, 0.0)
    return (V * np.exp(-tau * w)) @ V.T
