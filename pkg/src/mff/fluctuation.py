"""Multi-run fluctuation statistics and Monte-Carlo resampling bounds."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from . import sphere
from .ensemble import Ensemble, Target, population_inner, q_norm
from .objective import Dataset

POPULATION = "population"
Norm = Union[Dataset, str]

MINIMIZER_SLACK = 0.05


def _check_runs(runs: Sequence[Ensemble]) -> None:
    if len(runs) < 2:
        raise ValueError("need at least two runs (kappa >= 2)")
    m, d = runs[0].m, runs[0].d
    for e in runs[1:]:
        if e.m != m or e.d != d:
            raise ValueError(f"mixed ensemble shapes: (m={e.m}, d={e.d}) vs (m={m}, d={d})")


def run_gram(runs: Sequence[Ensemble]) -> np.ndarray:
    """kappa x kappa matrix of population inner products <f_k, f_l>."""
    k, m, d = len(runs), runs[0].m, runs[0].d
    Z = np.vstack([e.z for e in runs])
    w = np.concatenate([e.c / e.m for e in runs])
    K = sphere.arc_kernel_gram(Z, Z, d)
    return (w[:, None] * K * w[None, :]).reshape(k, m, k, m).sum(axis=(1, 3))


def per_run_fluctuations(runs: Sequence[Ensemble], norm: Norm = POPULATION) -> np.ndarray:
    """||f_k - f_bar||^2 for each run k."""
    _check_runs(runs)
    if isinstance(norm, Dataset):
        F = np.array([e.evaluate(norm.points) for e in runs])
        return np.mean((F - F.mean(axis=0)) ** 2, axis=1)
    P = run_gram(runs)
    # ||f_k - f_bar||^2 = P_kk - 2 mean_l P_kl + mean_kl P_kl
    return np.diag(P) - 2.0 * P.mean(axis=1) + P.mean()


def average_fluctuation(runs: Sequence[Ensemble], norm: Norm = POPULATION) -> float:
    """(1/kappa) sum_k ||f_k - f_bar||^2 in the data norm or the population norm.

    The population path uses the identity mean_k ||f_k||^2 - ||f_bar||^2 over
    the Gram matrix of all kappa*m neurons.
    """
    _check_runs(runs)
    if isinstance(norm, Dataset):
        return float(per_run_fluctuations(runs, norm).mean())
    if norm != POPULATION:
        raise ValueError(f"unknown norm {norm!r}")
    P = run_gram(runs)
    return float(np.trace(P) / len(runs) - P.mean())


def _measure_terms(mu: Union[Ensemble, Target], norm: Norm) -> tuple[float, float]:
    """(int ||phi(theta, .)||^2 dmu, ||f[mu]||^2) in the chosen norm."""
    if isinstance(mu, Target):
        if mu.kind == "zero":
            return 0.0, 0.0
        if mu.kind == "teacher":
            mu = mu.teacher
        else:
            return _circle_terms(mu, norm)
    if isinstance(norm, Dataset):
        Phi = mu.features(norm.points)
        self_term = float(np.mean(mu.c**2 * np.mean(Phi**2, axis=1)))
        f = mu.c @ Phi / mu.m
        return self_term, float(np.mean(f**2))
    if norm != POPULATION:
        raise ValueError(f"unknown norm {norm!r}")
    self_term = q_norm(mu, 2) * sphere.relu_selfnorm(mu.d)
    return self_term, population_inner(mu, mu, mu.d)


def _circle_terms(t: Target, norm: Norm) -> tuple[float, float]:
    if isinstance(norm, Dataset):
        Z = sphere.circle_nodes(t.d, t.quad_nodes)
        Phi = np.maximum(Z @ norm.points.T, 0.0)
        f = sphere.great_circle_target_value(norm.points)
        return float(np.mean(Phi**2)), float(np.mean(f**2))
    return sphere.relu_selfnorm(t.d), population_inner(t, t, t.d)


def mc_bound(mu_inf: Union[Ensemble, Target], norm: Norm = POPULATION) -> float:
    """int ||phi(theta, .)||^2 mu_inf(dtheta) - ||f_inf||^2."""
    self_term, f2 = _measure_terms(mu_inf, norm)
    return self_term - f2


def static_mc_error(mu: Union[Ensemble, Target], m: int, norm: Norm = POPULATION) -> float:
    """Expected squared error of an m-sample i.i.d. resampling of ``mu``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return mc_bound(mu, norm) / m


def init_measure_mc_bound(d: int, c_init: str | tuple = "gaussian") -> float:
    """Population-norm bound for the (continuous) initialization measure.

    z is uniform on S^d, independent of c.
    """
    from math import gamma, pi, sqrt

    kind, value = (c_init, None) if isinstance(c_init, str) else c_init
    selfnorm = sphere.relu_selfnorm(d)
    if kind == "gaussian":
        return selfnorm
    if kind == "zero":
        return 0.0
    if kind == "constant":
        v = float(value)
        # f[mu_0] is the constant v * E[max(0, z_1)]
        mean_relu = gamma((d + 1) / 2) / (2 * sqrt(pi) * gamma(d / 2 + 1))
        return v * v * (selfnorm - mean_relu**2)
    raise ValueError(f"unknown c_init {c_init!r}")


def estimate_kernel_max(data: Dataset, rng: np.random.Generator, starts: int = 64, iters: int = 300) -> float:
    """Estimate max_z (1/n) sum_l max(0, <z, x_l>)^2 by multi-start projected ascent.

    Seeds: ``starts`` random directions plus every data point. The result is a
    lower bound on the true maximum.
    """
    X = data.points
    d = X.shape[1] - 1
    Z = np.vstack([sphere.sample_uniform_sphere(d, rng, size=starts), sphere.normalize(X)])
    n = data.n
    for _ in range(iters):
        S = np.maximum(Z @ X.T, 0.0)
        G = 2.0 * S @ X / n
        Z = sphere.normalize(Z + sphere.tangent_project(Z, G))
    vals = np.mean(np.maximum(Z @ X.T, 0.0) ** 2, axis=1)
    return float(vals.max())


@dataclass
class MinimizerCheck:
    lhs1: float
    mid: float
    reg: float
    rhs2: float
    kernel_max: float
    kernel_max_estimated: bool
    pass1: bool
    pass2: bool

    def as_dict(self) -> dict:
        return asdict(self)


def minimizer_inequalities(
    e: Ensemble,
    lam: float,
    gamma1_star: float,
    problem: Union[Dataset, Target],
    rng: np.random.Generator | None = None,
    slack: float = MINIMIZER_SLACK,
) -> MinimizerCheck:
    """Check the two inequalities that any regularized global minimizer satisfies.

    lam^2 * int c^2 / K_M  <=  ||f - f*||^2
    ||f - f*||^2 + lam * int c^2  <=  lam * gamma_1(f*)^2

    ``problem`` is a Target (population norm) or a Dataset (data norm).
    Both are tested with multiplicative ``slack``.
    """
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    q2 = q_norm(e, 2)
    if isinstance(problem, Dataset):
        if rng is None:
            rng = np.random.default_rng(0)
        km = estimate_kernel_max(problem, rng)
        r = e.evaluate(problem.points) - problem.values
        err = float(np.mean(r**2))
        estimated = True
    else:
        km = sphere.relu_selfnorm(e.d)
        err = population_inner(e, e, e.d) - 2 * population_inner(e, problem, e.d) + population_inner(problem, problem, e.d)
        estimated = False
    lhs1 = lam**2 * q2 / km
    reg = lam * q2
    rhs2 = lam * gamma1_star**2
    return MinimizerCheck(
        lhs1=lhs1,
        mid=err,
        reg=reg,
        rhs2=rhs2,
        kernel_max=km,
        kernel_max_estimated=estimated,
        pass1=bool(lhs1 <= (1 + slack) * err),
        pass2=bool(err + reg <= (1 + slack) * rhs2),
    )


def variation_norm_upper(t: Target) -> float:
    """TV of the representing measure of f*; an upper bound on gamma_1(f*)."""
    if t.kind == "teacher":
        return q_norm(t.teacher, 1)
    if t.kind == "great_circle":
        return 1.0
    return 0.0


@dataclass
class FluctuationReport:
    m: int
    kappa: int
    epochs: list[int]
    fluct_emp: list[float]
    fluct_pop: list[float]
    mc_bound: float
    norms: dict = field(default_factory=dict)
    scaling: str = "unscaled; multiply by m for the plotted quantity"

    def to_json(self) -> dict:
        return asdict(self)


def fluctuation_report(
    snapshots_by_run: Sequence[dict[int, Ensemble]],
    bound_measure: Union[Ensemble, Target],
    data: Dataset | None = None,
    population: bool = True,
) -> FluctuationReport:
    """Fluctuations on the common snapshot grid of kappa runs."""
    kappa = len(snapshots_by_run)
    epochs = sorted(set.intersection(*(set(s) for s in snapshots_by_run)))
    m = snapshots_by_run[0][epochs[0]].m
    emp, pop, tv, two, two_sq = [], [], [], [], []
    for ep in epochs:
        runs = [s[ep] for s in snapshots_by_run]
        emp.append(average_fluctuation(runs, data) if data is not None else float("nan"))
        pop.append(average_fluctuation(runs, POPULATION) if population else float("nan"))
        tv.append(float(np.mean([q_norm(e, 1) for e in runs])))
        two.append(float(np.mean([np.sqrt(q_norm(e, 2)) for e in runs])))
        two_sq.append(float(np.mean([q_norm(e, 2) for e in runs])))
    norm = POPULATION if population or data is None else data
    return FluctuationReport(
        m=m,
        kappa=kappa,
        epochs=epochs,
        fluct_emp=emp,
        fluct_pop=pop,
        mc_bound=mc_bound(bound_measure, norm),
        norms={"tv": tv, "two": two, "two_sq": two_sq},
    )
