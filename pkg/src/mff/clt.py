"""Dynamical CLT on a discrete base measure.

With mu_0 = sum_i w_i delta_{theta_i}, the mean-field flow is exactly the
weighted M-particle gradient descent, so every quantity below is computed
without mean-field discretization error. Parameters are Euclidean:
theta = (c, z) in R^{1 + (d+1)}.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sphere
from .ensemble import act, make_teacher
from .linalg import psd_expm_neg
from .objective import Dataset, ObjectiveConfig, feature_grads, potential_grad, potential_hessians

DEFAULT_MAX_STEPS = 200


class CltError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaseMeasure:
    c: np.ndarray
    z: np.ndarray
    weights: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        for name, v in (("c", c), ("z", z), ("weights", w)):
            object.__setattr__(self, name, v)
        if z.shape[0] != c.size or w.size != c.size:
            raise ValueError("atoms and weights disagree in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def M(self) -> int:
        return self.c.size

    @property
    def dim(self) -> int:
        """Parameter dimension d + 2."""
        return self.z.shape[1] + 1

    def reweighted(self, weights) -> "BaseMeasure":
        return BaseMeasure(self.c, self.z, weights, self.activation)


def make_base_measure(M: int, d: int, rng: np.random.Generator, activation: str = "tanh") -> BaseMeasure:
    """M atoms with c ~ N(0, 1), z uniform on S^d, uniform weights."""
    z = sphere.sample_uniform_sphere(d, rng, size=M)
    c = rng.standard_normal(M)
    return BaseMeasure(c, z, np.full(M, 1.0 / M), activation)


def sample_omega_gaussian(base: BaseMeasure, rng: np.random.Generator) -> np.ndarray:
    """Gaussian discrepancy with covariance diag(w) - w w^T."""
    if base.M < 2:
        raise ValueError("need M >= 2 atoms")
    sw = np.sqrt(base.weights)
    g = rng.standard_normal(base.M)
    return sw * g - base.weights * (sw @ g)


def sample_omega_resampled(base: BaseMeasure, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw m atoms i.i.d. from the base; return sqrt(m) (counts/m - w) and the drawn indices."""
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = rng.choice(base.M, size=m, p=base.weights)
    counts = np.bincount(idx, minlength=base.M)
    a = np.sqrt(m) * (counts / m - base.weights)
    return a, idx


def _residual(c, z, w, data: Dataset, activation: str) -> np.ndarray:
    return (w * c) @ act(z @ data.points.T, activation) - data.values


@dataclass
class FlowPath:
    """Characteristic flow Theta_k of the base atoms on an Euler clock."""

    lr: float
    c: np.ndarray  # (K+1, M)
    z: np.ndarray  # (K+1, M, D)
    hessians: np.ndarray | None = None  # (K, M, dim, dim); step k uses hessians[k]

    @property
    def steps(self) -> int:
        return self.c.shape[0] - 1


def particle_flow(
    base: BaseMeasure, data: Dataset, cfg: ObjectiveConfig, lr: float, epochs: int, with_hessians: bool = False
) -> FlowPath:
    """Weighted particle GD from the base atoms (the exact mean-field flow of mu_0)."""
    c, z, w = base.c.copy(), base.z.copy(), base.weights
    cs, zs, hs = [c], [z], []
    for k in range(epochs):
        r = _residual(c, z, w, data, base.activation)
        if with_hessians:
            hs.append(potential_hessians(c, z, data.points, r, base.activation, cfg.lam, cfg.scale))
        g = potential_grad(c, z, data.points, r, base.activation, "euclidean", cfg.lam, cfg.scale)
        c = c - lr * g.c
        z = z - lr * g.z
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(z))):
            raise CltError(f"epoch {k + 1}: non-finite flow")
        cs.append(c)
        zs.append(z)
    return FlowPath(lr, np.array(cs), np.array(zs), np.array(hs) if with_hessians else None)


@dataclass
class CltTrajectory:
    flow: FlowPath
    omega: np.ndarray
    T: np.ndarray  # (K+1, M, dim)
    feature_grads: list = field(default_factory=list)  # per step, (M, n, dim)
    features: list = field(default_factory=list)  # per step, (M, n)

    @property
    def steps(self) -> int:
        return self.T.shape[0] - 1


def integrate_T(
    base: BaseMeasure,
    omega: np.ndarray,
    data: Dataset,
    cfg: ObjectiveConfig,
    lr: float,
    epochs: int,
    flow: FlowPath | None = None,
) -> CltTrajectory:
    """Advance Theta_t and the fluctuation field T_t together by forward Euler.

    dT_i/dt = -H_i T_i - sum_j w_j grad grad' K(Theta_i, Theta_j) T_j
              - sum_j a_j grad K(Theta_i, Theta_j),     T_0 = 0.
    """
    omega = np.asarray(omega, dtype=float)
    if flow is None:
        flow = particle_flow(base, data, cfg, lr, epochs, with_hessians=True)
    elif flow.hessians is None or flow.steps < epochs:
        raise CltError("flow path lacks Hessians or steps")
    X = data.points
    n = X.shape[0]
    w = base.weights
    T = np.zeros((base.M, base.dim))
    Ts = [T]
    grads, feats = [], []
    for k in range(epochs + 1):
        c, z = flow.c[k], flow.z[k]
        Gphi = feature_grads(c, z, X, base.activation)
        Phi = c[:, None] * act(z @ X.T, base.activation)
        grads.append(Gphi)
        feats.append(Phi)
        if k == epochs:
            break
        H = flow.hessians[k]
        self_term = np.einsum("mij,mj->mi", H, T)
        # sum_j w_j grad grad' K(Theta_i, Theta_j) T_j = (1/n) sum_x grad phi_i(x) [sum_j w_j grad phi_j(x) . T_j]
        lin = np.einsum("m,mld,md->l", w, Gphi, T)
        interaction = np.einsum("mld,l->md", Gphi, lin) / n
        # sum_j a_j grad K(Theta_i, Theta_j) = (1/n) sum_x grad phi_i(x) [sum_j a_j phi_j(x)]
        forcing = np.einsum("mld,l->md", Gphi, omega @ Phi) / n
        T = T - lr * cfg.scale * (interaction + forcing) - lr * self_term
        if not np.all(np.isfinite(T)):
            raise CltError(f"epoch {k + 1}: non-finite fluctuation field")
        Ts.append(T)
    return CltTrajectory(flow, omega, np.array(Ts), grads, feats)


def gbar(traj: CltTrajectory, k: int) -> np.ndarray:
    """Resampling-only deviation sum_i a_i phi(Theta_i(t_k), x) on the data points."""
    return traj.omega @ traj.features[k]


def predicted_g(traj: CltTrajectory, base: BaseMeasure, k: int) -> np.ndarray:
    """g_t on the data points: gbar plus sum_i w_i grad phi(Theta_i, x) . T_i."""
    return gbar(traj, k) + np.einsum("m,mld,md->l", base.weights, traj.feature_grads[k], traj.T[k])


def evaluate_g_at(traj: CltTrajectory, base: BaseMeasure, k: int, X: np.ndarray) -> np.ndarray:
    """predicted g_t at arbitrary points X."""
    c, z = traj.flow.c[k], traj.flow.z[k]
    Phi = c[:, None] * act(z @ X.T, base.activation)
    G = feature_grads(c, z, X, base.activation)
    return traj.omega @ Phi + np.einsum("m,mld,md->l", base.weights, G, traj.T[k])


def mean_field_function(flow: FlowPath, base: BaseMeasure, k: int, X: np.ndarray) -> np.ndarray:
    return (base.weights * flow.c[k]) @ act(flow.z[k] @ X.T, base.activation)


def jacobian_flow(flow: FlowPath, s: int, t: int) -> np.ndarray:
    """Euler solution of dJ/dt = -H(t) J from J_{s,s} = Id, per atom; shape (M, dim, dim)."""
    if t < s:
        raise ValueError("need t >= s")
    if flow.hessians is None or t > flow.hessians.shape[0]:
        raise CltError(f"flow path has no Hessians covering steps [{s}, {t})")
    M, dim = flow.c.shape[1], flow.z.shape[2] + 1
    J = np.broadcast_to(np.eye(dim), (M, dim, dim)).copy()
    for k in range(s, t):
        J = J - flow.lr * np.einsum("mij,mjk->mik", flow.hessians[k], J)
    return J


def volterra_residual(
    traj: CltTrajectory, base: BaseMeasure, data: Dataset, cfg: ObjectiveConfig, max_steps: int = DEFAULT_MAX_STEPS
) -> np.ndarray:
    """r(t_k) = || g_k + int_0^t Gamma_{t,s} g_s dnu_hat ds - gbar_k ||_nu_hat for every step k.

    The time integral uses the trapezoid rule on the Euler grid, with
    Gamma_{t,s} built from the Euler Jacobians J_{t,s}. The sum over s is
    carried by the recursion S_{k+1} = (I - lr H_k) S_k + V_{k+1}.
    """
    K = traj.steps
    if K > max_steps:
        raise CltError(f"time grid of {K} steps exceeds the {max_steps}-step guard")
    n = data.n
    lr = traj.flow.lr
    w = base.weights
    res = np.zeros(K + 1)
    S = None
    for k in range(K + 1):
        g = predicted_g(traj, base, k)
        # V_k = int grad phi(Theta_k, x') g_k(x') dnu_hat(x'), scaled like the gradient
        V = cfg.scale * np.einsum("mld,l->md", traj.feature_grads[k], g) / n
        if S is None:
            S = 0.5 * V
        else:
            H = traj.flow.hessians[k - 1]
            S = S - lr * np.einsum("mij,mj->mi", H, S) + V
        Y = S - 0.5 * V
        memory = lr * np.einsum("m,mld,md->l", w, traj.feature_grads[k], Y)
        res[k] = np.sqrt(np.mean((g + memory - gbar(traj, k)) ** 2))
    return res


def gamma_infty(
    c: np.ndarray, z: np.ndarray, weights: np.ndarray, data: Dataset, cfg: ObjectiveConfig, tau: float, activation: str = "tanh"
) -> np.ndarray:
    """n x n stationary Volterra kernel at lag tau.

    sum_i w_i grad phi(theta_i, x)^T exp(-tau H_i^+) grad phi(theta_i, x'),
    with H_i^+ the PSD part of grad grad V(theta_i, mu_inf).
    """
    X = data.points
    r = _residual(c, z, weights, data, activation)
    H = potential_hessians(c, z, X, r, activation, cfg.lam, cfg.scale)
    G = feature_grads(c, z, X, activation)
    out = np.zeros((data.n, data.n))
    for i in range(c.size):
        E = psd_expm_neg(H[i], tau)
        out += weights[i] * G[i] @ E @ G[i].T
    return 0.5 * (out + out.T)


# ----------------------------------------------------------------- experiments


@dataclass(frozen=True)
class CltInstance:
    base: BaseMeasure
    data: Dataset
    cfg: ObjectiveConfig


def make_instance(M: int = 64, d: int = 3, n: int = 8, seed: int = 0, lam: float = 0.0, activation: str = "tanh") -> CltInstance:
    """Small tanh teacher-student instance used by the CLT checks."""
    rng = np.random.default_rng(seed)
    teacher = make_teacher(d, rng, m_t=2, activation="tanh", mode="euclidean")
    X = sphere.sample_uniform_sphere(d, rng, size=n)
    data = Dataset(X, 2.0 * teacher.evaluate(X))
    base = make_base_measure(M, d, rng, activation)
    return CltInstance(base, data, ObjectiveConfig("empirical", lam, False, d))


def prediction_error(inst: CltInstance, flow: FlowPath, m: int, rng: np.random.Generator) -> float:
    """|| g_pred - sqrt(m) (f^(m) - f) ||_nu_hat at the end of the flow for one resampling trial.

    The m-particle network starts from the drawn atoms; duplicates move
    together, so it is the weighted flow with weights counts/m.
    """
    base, data, cfg = inst.base, inst.data, inst.cfg
    a, idx = sample_omega_resampled(base, m, rng)
    K = flow.steps
    traj = integrate_T(base, a, data, cfg, flow.lr, K, flow=flow)
    counts = np.bincount(idx, minlength=base.M)
    finite = particle_flow(base.reweighted(counts / m), data, cfg, flow.lr, K)
    X = data.points
    f_m = mean_field_function(finite, base.reweighted(counts / m), K, X)
    f = mean_field_function(flow, base, K, X)
    actual = np.sqrt(m) * (f_m - f)
    return float(np.sqrt(np.mean((predicted_g(traj, base, K) - actual) ** 2)))


def clt_scaling(inst: CltInstance, m_list, trials: int, lr: float, epochs: int, seed: int = 0) -> dict:
    flow = particle_flow(inst.base, inst.data, inst.cfg, lr, epochs, with_hessians=True)
    rng = np.random.default_rng(seed)
    err_by_m = []
    for m in m_list:
        errs = [prediction_error(inst, flow, m, rng) for _ in range(trials)]
        err_by_m.append(float(np.mean(errs)))
    slope = float(np.polyfit(np.log(m_list), np.log(err_by_m), 1)[0])
    return {"err_by_m": err_by_m, "fitted_slope": slope}


def volterra_by_lr(inst: CltInstance, horizon: float, lrs, seed: int = 0) -> dict:
    """max_t r(t) for each step size at a fixed physical horizon (same omega draw)."""
    omega = sample_omega_gaussian(inst.base, np.random.default_rng(seed))
    out = {}
    for lr in lrs:
        epochs = int(round(horizon / lr))
        traj = integrate_T(inst.base, omega, inst.data, inst.cfg, lr, epochs)
        out[repr(float(lr))] = float(volterra_residual(traj, inst.base, inst.data, inst.cfg).max())
    return out
