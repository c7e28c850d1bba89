"""Spherical geometry, sampling and the ReLU arc-cosine kernel on S^d.

Points of S^d are stored as arrays of length ``d + 1`` (ambient dimension).
All kernel routines broadcast over leading axes.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

AMBIENT_OFFSET = 1  # S^d sits in R^{d + AMBIENT_OFFSET}
UNIT_TOL = 1e-12
DEFAULT_CIRCLE_NODES = 512


def ambient_dim(d: int) -> int:
    return d + AMBIENT_OFFSET


def _check_d(d: int) -> None:
    if d < 1:
        raise ValueError(f"sphere dimension must be >= 1, got d={d}")


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def unit_vector(coords, d: int | None = None) -> np.ndarray:
    """Validate ``coords`` as a point of S^d and return it as a float array."""
    u = np.asarray(coords, dtype=float)
    if d is not None and u.shape[-1] != ambient_dim(d):
        raise ValueError(f"expected ambient dimension {ambient_dim(d)}, got {u.shape[-1]}")
    norms = np.linalg.norm(u, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError("vector is not on the unit sphere")
    return u


def sample_uniform_sphere(d: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) on S^d via normalized isotropic Gaussians."""
    _check_d(d)
    shape = (ambient_dim(d),) if size is None else (size, ambient_dim(d))
    return normalize(rng.standard_normal(shape))


def tangent_project(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project ``g`` onto the tangent plane of the sphere at ``u``."""
    return g - np.sum(g * u, axis=-1, keepdims=True) * u


def _match_dims(u: np.ndarray, v: np.ndarray, d: int) -> None:
    D = ambient_dim(d)
    if u.shape[-1] != D or v.shape[-1] != D:
        raise ValueError(
            f"dimension mismatch: expected ambient {D}, got {u.shape[-1]} and {v.shape[-1]}"
        )


def arc_kernel_from_cos(t, d: int) -> np.ndarray:
    """Arc-cosine kernel as a function of the cosine of the angle."""
    t = np.clip(t, -1.0, 1.0)
    alpha = np.arccos(t)
    return (np.sin(alpha) + (np.pi - alpha) * t) / (2.0 * (d + 1) * np.pi)


def relu_arc_kernel(u, v, d: int):
    """E_x[max(0,<u,x>) max(0,<v,x>)] for x uniform on S^d."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _match_dims(u, v, d)
    return arc_kernel_from_cos(np.sum(u * v, axis=-1), d)


def arc_kernel_gram(U: np.ndarray, V: np.ndarray, d: int) -> np.ndarray:
    """Pairwise kernel matrix between rows of ``U`` and rows of ``V``."""
    _match_dims(U, V, d)
    return arc_kernel_from_cos(U @ V.T, d)


def relu_arc_kernel_grad(u, v, d: int) -> np.ndarray:
    """Tangent gradient of the kernel in its first argument.

    Zero at alpha in {0, pi} by convention.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _match_dims(u, v, d)
    t = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
    alpha = np.arccos(t)
    coef = (np.pi - alpha) / (2.0 * (d + 1) * np.pi)
    degenerate = (t >= 1.0) | (t <= -1.0)
    coef = np.where(degenerate, 0.0, coef)
    return coef[..., None] * (v - t[..., None] * u)


def arc_kernel_grad_sum(U: np.ndarray, V: np.ndarray, W: np.ndarray, d: int) -> np.ndarray:
    """Row i: sum_j W[i, j] * tangent-grad_u K(U_i, V_j).

    Avoids materializing the (m, m', D) tensor.
    """
    t = np.clip(U @ V.T, -1.0, 1.0)
    alpha = np.arccos(t)
    coef = (np.pi - alpha) / (2.0 * (d + 1) * np.pi)
    coef = np.where((t >= 1.0) | (t <= -1.0), 0.0, coef) * W
    return coef @ V - np.sum(coef * t, axis=1)[:, None] * U


def relu_selfnorm(d: int) -> float:
    """Squared L2(nu) norm of a single ReLU feature on S^d."""
    _check_d(d)
    return 1.0 / (2.0 * (d + 1))


def mc_spherical_integral(
    integrand: Callable[[np.ndarray], np.ndarray],
    d: int,
    n_samples: int,
    rng: np.random.Generator,
    batch: int = 200_000,
) -> tuple[float, float]:
    """Plain Monte-Carlo mean of ``integrand`` over uniform S^d.

    ``integrand`` receives an ``(k, d+1)`` array and returns ``k`` values.
    Returns ``(estimate, stderr)``.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        k = min(batch, n_samples - done)
        x = sample_uniform_sphere(d, rng, size=k)
        vals = np.asarray(integrand(x), dtype=float).reshape(k)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            i = bad[0]
            raise FloatingPointError(
                f"integrand returned {vals[i]!r} at sample {done + i}: x={x[i].tolist()}"
            )
        total += vals.sum()
        total_sq += np.dot(vals, vals)
        done += k
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return mean, float(np.sqrt(var / n_samples))


def circle_nodes(d: int, quad_nodes: int = DEFAULT_CIRCLE_NODES) -> np.ndarray:
    """Equispaced points z(psi) = (cos psi, sin psi, 0, ..., 0) on the great circle."""
    if quad_nodes < 8:
        raise ValueError("quad_nodes must be >= 8")
    psi = 2.0 * np.pi * np.arange(quad_nodes) / quad_nodes
    Z = np.zeros((quad_nodes, ambient_dim(d)))
    Z[:, 0] = np.cos(psi)
    Z[:, 1] = np.sin(psi)
    return Z


def great_circle_potential(u, d: int, quad_nodes: int = DEFAULT_CIRCLE_NODES):
    """Average of K(u, z) over the uniform measure on the first-two-axes great circle.

    Composite trapezoid; the integrand is periodic so the rule converges fast.
    Broadcasts over leading axes of ``u``.
    """
    u = np.asarray(u, dtype=float)
    Z = circle_nodes(d, quad_nodes)
    _match_dims(u, Z, d)
    return arc_kernel_from_cos(u @ Z.T, d).mean(axis=-1)


def great_circle_potential_grad(U: np.ndarray, d: int, quad_nodes: int = DEFAULT_CIRCLE_NODES) -> np.ndarray:
    """Tangent gradient of :func:`great_circle_potential` for rows of ``U``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Z = circle_nodes(d, quad_nodes)
    W = np.full((U.shape[0], quad_nodes), 1.0 / quad_nodes)
    return arc_kernel_grad_sum(U, Z, W, d)


def great_circle_target_value(x):
    """f*(x) for the great-circle measure: sqrt(x_1^2 + x_2^2) / pi."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2) / np.pi


def great_circle_target_quadrature(x, quad_nodes: int = DEFAULT_CIRCLE_NODES):
    """Trapezoid evaluation of the defining circle integral (oracle for the closed form)."""
    x = np.asarray(x, dtype=float)
    psi = 2.0 * np.pi * np.arange(quad_nodes) / quad_nodes
    proj = x[..., 0, None] * np.cos(psi) + x[..., 1, None] * np.sin(psi)
    return np.maximum(proj, 0.0).mean(axis=-1)


def great_circle_self_inner(d: int, quad_nodes: int = DEFAULT_CIRCLE_NODES) -> float:
    """||f*||^2 for the great-circle target.

    The double circle integral only depends on the angle difference, so it
    reduces to the potential at any in-plane point.
    """
    u = np.zeros(ambient_dim(d))
    u[0] = 1.0
    return float(great_circle_potential(u, d, quad_nodes))
