"""Empirical and exact-population losses, particle gradients and potential Hessians.

Per-particle gradients are ``m * dL/dtheta_i`` (equivalently ``grad V(theta_i, mu)``
for the empirical measure), optionally multiplied by ``d``.  In sphere mode the
z-gradient is projected onto the tangent plane.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from . import sphere
from .ensemble import Ensemble, Neuron, Target, act, act_prime, act_second, population_inner, target_potential, target_potential_grad
from .linalg import min_eigenvalue


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.points, dtype=float))
        y = np.asarray(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "values", y)
        if y.size < 1:
            raise ValueError("dataset needs n >= 1 points")
        if X.shape[0] != y.size:
            raise ValueError("points and values disagree in length")
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset values must be finite")

    @property
    def n(self) -> int:
        return self.values.size


def make_dataset(target: Target, n: int, rng: np.random.Generator) -> Dataset:
    X = sphere.sample_uniform_sphere(target.d, rng, size=n)
    return Dataset(X, target.evaluate(X))


@dataclass(frozen=True)
class ObjectiveConfig:
    loss: str = "empirical"
    lam: float = 0.0
    rescale_by_d: bool = False
    d: int = 16

    def __post_init__(self):
        if self.loss not in ("empirical", "population"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @property
    def scale(self) -> float:
        return float(self.d) if self.rescale_by_d else 1.0


class LossParts(NamedTuple):
    total: float
    fit: float
    reg: float


class Gradient(NamedTuple):
    c: np.ndarray
    z: np.ndarray


Problem = Union[Dataset, Target]


def _reg(e: Ensemble, cfg: ObjectiveConfig) -> float:
    return cfg.scale * cfg.lam * 0.5 * float(np.mean(e.c**2))


def potential_grad(c, z, X, residual, activation, mode, lam, scale) -> Gradient:
    """grad_theta V(theta, mu) for atoms (c, z) given the residual f_mu - f* on X."""
    S = z @ X.T
    n = X.shape[0]
    gc = act(S, activation) @ residual / n + lam * c
    gz = c[:, None] * ((act_prime(S, activation) * residual) @ X) / n
    if mode == "sphere":
        gz = sphere.tangent_project(z, gz)
    return Gradient(scale * gc, scale * gz)


def empirical_loss(e: Ensemble, data: Dataset, cfg: ObjectiveConfig) -> LossParts:
    r = e.evaluate(data.points) - data.values
    fit = cfg.scale * 0.5 * float(np.mean(r**2))
    reg = _reg(e, cfg)
    return LossParts(fit + reg, fit, reg)


def empirical_gradient(e: Ensemble, data: Dataset, cfg: ObjectiveConfig) -> Gradient:
    r = e.evaluate(data.points) - data.values
    return potential_grad(e.c, e.z, data.points, r, e.activation, e.mode, cfg.lam, cfg.scale)


def _population_parts(e: Ensemble, t: Target, cfg: ObjectiveConfig, with_grad: bool):
    if e.activation != "relu" or e.mode != "sphere":
        raise NotImplementedError("population loss needs relu activation in sphere mode")
    d = e.d
    w = e.c / e.m
    G = np.clip(e.z @ e.z.T, -1.0, 1.0)
    K = sphere.arc_kernel_from_cos(G, d)
    Kw = K @ w
    F = target_potential(t, e.z)
    ff = population_inner(t, t, d)
    err = float(w @ Kw - 2.0 * w @ F + ff)
    fit = cfg.scale * 0.5 * err
    reg = _reg(e, cfg)
    parts = LossParts(fit + reg, fit, reg)
    if not with_grad:
        return parts, None
    gc = Kw - F + cfg.lam * e.c
    W = np.broadcast_to(w, (e.m, e.m))
    gz = e.c[:, None] * (sphere.arc_kernel_grad_sum(e.z, e.z, W, d) - target_potential_grad(t, e.z))
    return parts, Gradient(cfg.scale * gc, cfg.scale * gz)


def population_loss(e: Ensemble, t: Target, cfg: ObjectiveConfig) -> LossParts:
    return _population_parts(e, t, cfg, False)[0]


def population_gradient(e: Ensemble, t: Target, cfg: ObjectiveConfig) -> Gradient:
    return _population_parts(e, t, cfg, True)[1]


def loss_and_gradient(e: Ensemble, problem: Problem, cfg: ObjectiveConfig) -> tuple[LossParts, Gradient]:
    if cfg.loss == "population":
        if not isinstance(problem, Target):
            raise TypeError("population loss needs a Target")
        return _population_parts(e, problem, cfg, True)
    if not isinstance(problem, Dataset):
        raise TypeError("empirical loss needs a Dataset")
    r = e.evaluate(problem.points) - problem.values
    fit = cfg.scale * 0.5 * float(np.mean(r**2))
    reg = _reg(e, cfg)
    g = potential_grad(e.c, e.z, problem.points, r, e.activation, e.mode, cfg.lam, cfg.scale)
    return LossParts(fit + reg, fit, reg), g


def loss(e: Ensemble, problem: Problem, cfg: ObjectiveConfig) -> LossParts:
    if cfg.loss == "population":
        return population_loss(e, problem, cfg)
    return empirical_loss(e, problem, cfg)


def gradient(e: Ensemble, problem: Problem, cfg: ObjectiveConfig) -> Gradient:
    return loss_and_gradient(e, problem, cfg)[1]


def feature_grads(c, z, X, activation) -> np.ndarray:
    """grad_theta phi(theta_i, x_l) as an (M, n, D+1) array; theta = (c, z)."""
    S = z @ X.T
    out = np.empty(S.shape + (z.shape[1] + 1,))
    out[..., 0] = act(S, activation)
    out[..., 1:] = (c[:, None] * act_prime(S, activation))[..., None] * X[None, :, :]
    return out


def potential_hessians(c, z, X, residual, activation, lam, scale) -> np.ndarray:
    """grad grad V(theta_i, mu) for all atoms, shape (M, D+1, D+1).

    = int grad grad phi(theta_i, x) (f - f*)(x) dnu_hat + lam * e_c e_c^T,
    in ambient coordinates.
    """
    S = z @ X.T
    n = X.shape[0]
    M, D = z.shape
    H = np.zeros((M, D + 1, D + 1))
    cross = (act_prime(S, activation) * residual) @ X / n
    H[:, 0, 1:] = cross
    H[:, 1:, 0] = cross
    wzz = c[:, None] * act_second(S, activation) * residual / n
    H[:, 1:, 1:] = np.einsum("ml,li,lj->mij", wzz, X, X)
    H[:, 0, 0] += lam
    return scale * H


def potential_hessian(theta: Neuron, e: Ensemble, data: Dataset, cfg: ObjectiveConfig) -> np.ndarray:
    """grad grad V(theta, mu_e) for a single neuron under the empirical loss."""
    if cfg.loss != "empirical" or not isinstance(data, Dataset):
        raise NotImplementedError("potential Hessian is only available for the empirical loss")
    r = e.evaluate(data.points) - data.values
    c = np.array([theta.c])
    z = np.asarray(theta.z, dtype=float)[None, :]
    return potential_hessians(c, z, data.points, r, e.activation, cfg.lam, cfg.scale)[0]


def curvature_defect(e: Ensemble, data: Dataset, cfg: ObjectiveConfig, weights=None) -> float:
    """-(mean over atoms) of min(smallest Hessian eigenvalue, 0)."""
    if cfg.loss != "empirical" or not isinstance(data, Dataset):
        raise NotImplementedError("curvature defect is only available for the empirical loss")
    if weights is None:
        r = e.evaluate(data.points) - data.values
        weights = np.full(e.m, 1.0 / e.m)
    else:
        weights = np.asarray(weights, dtype=float)
        r = (weights * e.c) @ e.features(data.points) - data.values
    H = potential_hessians(e.c, e.z, data.points, r, e.activation, cfg.lam, cfg.scale)
    return curvature_defect_from_hessians(H, weights)


def curvature_defect_from_hessians(H: np.ndarray, weights: np.ndarray) -> float:
    lam_min = np.array([min_eigenvalue(h) for h in H])
    return float(-np.sum(weights * np.minimum(lam_min, 0.0)))
