import numpy as np
import pytest
from hypothesis import given, strategies as st

from mff.linalg import EigenConvergenceError, jacobi_eigh, jacobi_eigvalsh, min_eigenvalue, psd_expm_neg


def count_below(A, x):
    """Sylvester inertia: number of eigenvalues < x from the LDL^T pivots of A - x I."""
    a = np.array(A, dtype=float) - x * np.eye(len(A))
    n = len(a)
    count = 0
    for k in range(n):
        piv = a[k, k]
        if piv == 0.0:
            piv = 1e-300
        if piv < 0:
            count += 1
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :]) / piv
    return count


def bisection_eigenvalues(A, tol=1e-13):
    """Independent oracle: every eigenvalue by bisection on the inertia count."""
    radius = np.max(np.sum(np.abs(A), axis=1)) + 1.0
    out = []
    for k in range(len(A)):
        lo, hi = -radius, radius
        while hi - lo > tol * radius:
            mid = 0.5 * (lo + hi)
            if count_below(A, mid) > k:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
    return np.array(out)


def random_symmetric(n, rng):
    B = rng.standard_normal((n, n))
    return 0.5 * (B + B.T)


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_matches_bisection_oracle(n, seed):
    A = random_symmetric(n, np.random.default_rng(seed))
    np.testing.assert_allclose(jacobi_eigvalsh(A), bisection_eigenvalues(A), atol=1e-9)


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_decomposition(n, seed):
    A = random_symmetric(n, np.random.default_rng(seed))
    w, V = jacobi_eigh(A)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-12)
    np.testing.assert_allclose((V * w) @ V.T, A, atol=1e-12)


def test_repeated_and_diagonal():
    A = np.diag([3.0, 1.0, 1.0, -2.0])
    np.testing.assert_allclose(jacobi_eigvalsh(A), [-2, 1, 1, 3])
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    np.testing.assert_allclose(jacobi_eigvalsh(Q @ A @ Q.T), [-2, 1, 1, 3], atol=1e-12)
    assert min_eigenvalue(np.zeros((3, 3))) == 0.0


def test_input_validation():
    with pytest.raises(ValueError):
        jacobi_eigh(np.ones((2, 3)))
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sweep_limit():
    A = random_symmetric(8, np.random.default_rng(1))
    with pytest.raises(EigenConvergenceError):
        jacobi_eigh(A, max_sweeps=1)


def test_psd_expm(rng):
    A = random_symmetric(5, rng)
    E0 = psd_expm_neg(A, 0.0)
    np.testing.assert_allclose(E0, np.eye(5), atol=1e-12)
    E = psd_expm_neg(A, 0.7)
    w = np.linalg.eigvalsh(E)
    assert np.all(w > 0) and np.all(w <= 1 + 1e-12)
    # semigroup property
    np.testing.assert_allclose(psd_expm_neg(A, 0.3) @ psd_expm_neg(A, 0.4), E, atol=1e-12)
