import numpy as np
import pytest

from mff import sphere
from mff.ensemble import Ensemble, Target, init_ensemble, make_teacher, population_inner, population_l2_error
from mff.fluctuation import (
    POPULATION,
    average_fluctuation,
    estimate_kernel_max,
    fluctuation_report,
    init_measure_mc_bound,
    mc_bound,
    minimizer_inequalities,
    per_run_fluctuations,
    static_mc_error,
    variation_norm_upper,
)
from mff.objective import Dataset, make_dataset

D = 16


def resample(mu: Ensemble, m: int, rng) -> Ensemble:
    idx = rng.integers(0, mu.m, size=m)
    return Ensemble(mu.c[idx], mu.z[idx], mu.d)


def test_population_fluct_matches_pairwise(rng):
    runs = [init_ensemble(6, D, "gaussian", rng) for _ in range(4)]
    per = per_run_fluctuations(runs)
    for k, e in enumerate(runs):
        # ||f_k - f_bar||^2 expanded over pairs
        direct = population_inner(e, e, D) - 2 * np.mean([population_inner(e, o, D) for o in runs]) + np.mean(
            [[population_inner(a, b, D) for b in runs] for a in runs]
        )
        assert per[k] == pytest.approx(direct, rel=1e-12)
    assert average_fluctuation(runs) == pytest.approx(per.mean(), rel=1e-12)


def test_empirical_fluct_direct(rng):
    runs = [init_ensemble(5, D, "gaussian", rng) for _ in range(3)]
    data = Dataset(sphere.sample_uniform_sphere(D, rng, size=9), np.zeros(9))
    F = np.array([e.evaluate(data.points) for e in runs])
    assert average_fluctuation(runs, data) == pytest.approx(np.mean((F - F.mean(0)) ** 2), rel=1e-13)


def test_identical_runs_have_zero_fluct(rng):
    e = init_ensemble(5, D, "gaussian", rng)
    assert abs(average_fluctuation([e, e, e])) < 1e-15


def test_needs_two_runs(rng):
    e = init_ensemble(5, D, "gaussian", rng)
    with pytest.raises(ValueError):
        average_fluctuation([e])
    with pytest.raises(ValueError):
        average_fluctuation([e, init_ensemble(6, D, "gaussian", rng)])
    with pytest.raises(ValueError):
        average_fluctuation([e, e], norm="sup")


def test_static_error_by_resampling(rng):
    mu = init_ensemble(7, D, "gaussian", rng)
    m, trials = 10, 3000
    errs = np.array([population_l2_error(resample(mu, m, rng), mu, D) for _ in range(trials)])
    pred = static_mc_error(mu, m)
    assert abs(errs.mean() - pred) < 4 * errs.std() / np.sqrt(trials)


def test_static_error_empirical_norm(rng):
    mu = init_ensemble(7, D, "gaussian", rng)
    data = Dataset(sphere.sample_uniform_sphere(D, rng, size=11), np.zeros(11))
    m, trials = 5, 3000
    f = mu.evaluate(data.points)
    errs = np.array([np.mean((resample(mu, m, rng).evaluate(data.points) - f) ** 2) for _ in range(trials)])
    assert abs(errs.mean() - static_mc_error(mu, m, data)) < 4 * errs.std() / np.sqrt(trials)


def test_average_fluct_expectation(rng):
    # E[(1/kappa) sum ||f_k - f_bar||^2] = (kappa-1)/kappa * bound / m
    mu = init_ensemble(6, D, "gaussian", rng)
    m, kappa, trials = 8, 4, 1500
    vals = np.array([average_fluctuation([resample(mu, m, rng) for _ in range(kappa)]) for _ in range(trials)])
    pred = (kappa - 1) / kappa * mc_bound(mu) / m
    assert abs(vals.mean() - pred) < 4 * vals.std() / np.sqrt(trials)


def test_teacher_bound_value(rng):
    t = Target.from_teacher(make_teacher(D, rng, angle=1.766))
    ff = (np.pi + np.sin(1.766) + (np.pi - 1.766) * np.cos(1.766)) / (4 * 17 * np.pi)
    assert mc_bound(t) == pytest.approx(1 / 34 - ff, rel=1e-12)
    assert mc_bound(t) == pytest.approx(0.011363, abs=1e-6)
    assert mc_bound(Target.zero(D)) == 0.0


def test_circle_bound_empirical_vs_population(rng):
    t = Target.great_circle(D)
    assert mc_bound(t) == pytest.approx(1 / 34 - population_inner(t, t, D))
    big = make_dataset(t, 100_000, rng)
    assert mc_bound(t, big) == pytest.approx(mc_bound(t), rel=0.03)


def test_init_measure_bounds(rng):
    assert init_measure_mc_bound(D) == pytest.approx(1 / 34)
    assert init_measure_mc_bound(D, "zero") == 0.0
    # constant init: v^2 (selfnorm - (E relu(z_1))^2), checked by MC
    est, _ = sphere.mc_spherical_integral(lambda X: np.maximum(X[:, 0], 0), D, 400_000, rng)
    assert init_measure_mc_bound(D, ("constant", 2.0)) == pytest.approx(4 * (1 / 34 - est**2), rel=5e-3)
    with pytest.raises(ValueError):
        init_measure_mc_bound(D, "bogus")


def test_kernel_max_lower_bound(rng):
    data = Dataset(sphere.sample_uniform_sphere(D, rng, size=8), np.zeros(8))
    km = estimate_kernel_max(data, rng)
    Z = sphere.sample_uniform_sphere(D, rng, size=5000)
    sampled = np.mean(np.maximum(Z @ data.points.T, 0) ** 2, axis=1).max()
    assert km >= sampled
    assert km <= 1.0


def test_minimizer_inequalities_trivial(rng):
    t = Target.from_teacher(make_teacher(D, rng))
    zero = Ensemble(np.zeros(4), sphere.sample_uniform_sphere(D, rng, size=4), D)
    chk = minimizer_inequalities(zero, 0.01, variation_norm_upper(t), t)
    assert chk.lhs1 == 0.0 and chk.pass1
    # zero network: mid = ||f*||^2 which exceeds lambda * gamma^2 for small lambda
    assert not chk.pass2
    with pytest.raises(ValueError):
        minimizer_inequalities(zero, 0.0, 1.0, t)


def test_variation_norm_upper(rng):
    assert variation_norm_upper(Target.from_teacher(make_teacher(D, rng))) == 1.0
    assert variation_norm_upper(Target.great_circle(D)) == 1.0
    assert variation_norm_upper(Target.zero(D)) == 0.0


def test_report(rng):
    snaps = [{0: init_ensemble(5, D, "gaussian", rng), 3: init_ensemble(5, D, "gaussian", rng)} for _ in range(3)]
    t = Target.from_teacher(make_teacher(D, rng))
    data = make_dataset(t, 6, rng)
    rep = fluctuation_report(snaps, t, data=data)
    assert rep.epochs == [0, 3] and rep.kappa == 3 and rep.m == 5
    assert rep.fluct_pop[1] == pytest.approx(average_fluctuation([s[3] for s in snaps], POPULATION))
    # Jensen: mean of q2 dominates the squared mean of sqrt(q2)
    assert np.all(np.array(rep.norms["two_sq"]) >= np.array(rep.norms["two"]) ** 2 - 1e-15)
    assert set(rep.to_json()) >= {"m", "kappa", "epochs", "fluct_emp", "fluct_pop", "mc_bound", "norms"}
