import numpy as np
import pytest

from mff import sphere
from mff.ensemble import Ensemble, Neuron, Target, init_ensemble, make_teacher
from mff.objective import (
    Dataset,
    ObjectiveConfig,
    curvature_defect,
    gradient,
    loss,
    make_dataset,
    potential_grad,
    potential_hessian,
    potential_hessians,
)

D = 16
KINK = 1e-3


def directional_check(e, problem, cfg, rng, h=1e-6):
    """Compare the particle gradient with a central difference of m * L along a tangent direction."""
    g = gradient(e, problem, cfg)
    dc = rng.standard_normal(e.m)
    if e.mode == "sphere":
        dz = sphere.tangent_project(e.z, rng.standard_normal(e.z.shape))

        def at(s):
            return e.with_params(e.c + s * dc, sphere.normalize(e.z + s * dz))
    else:
        dz = rng.standard_normal(e.z.shape)

        def at(s):
            return e.with_params(e.c + s * dc, e.z + s * dz)

    fd = e.m * (loss(at(h), problem, cfg).total - loss(at(-h), problem, cfg).total) / (2 * h)
    an = g.c @ dc + np.sum(g.z * dz)
    return abs(fd - an) / max(abs(an), 1e-12)


def kink_free_instance(rng, m=8, n=12):
    while True:
        e = init_ensemble(m, D, "gaussian", rng)
        X = sphere.sample_uniform_sphere(D, rng, size=n)
        if np.min(np.abs(e.z @ X.T)) > KINK:
            t = Target.from_teacher(make_teacher(D, rng))
            return e, Dataset(X, t.evaluate(X))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("lam,rescale", [(0.0, False), (0.05, True)])
def test_empirical_gradient_fd(seed, lam, rescale):
    rng = np.random.default_rng(seed)
    e, data = kink_free_instance(rng)
    assert directional_check(e, data, ObjectiveConfig("empirical", lam, rescale, D), rng) < 1e-5


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", ["teacher", "great_circle"])
def test_population_gradient_fd(seed, kind):
    rng = np.random.default_rng(100 + seed)
    e = init_ensemble(6, D, "gaussian", rng)
    t = Target.from_teacher(make_teacher(D, rng)) if kind == "teacher" else Target.great_circle(D)
    assert directional_check(e, t, ObjectiveConfig("population", 0.01, True, D), rng) < 1e-5


def test_gradient_c_coordinates(rng):
    e, data = kink_free_instance(rng)
    cfg = ObjectiveConfig("empirical", 0.1, False, D)
    g = gradient(e, data, cfg)
    h = 1e-6
    for i in range(e.m):
        c = e.c.copy()
        c[i] += h
        up = loss(e.with_params(c, e.z), data, cfg).total
        c[i] -= 2 * h
        dn = loss(e.with_params(c, e.z), data, cfg).total
        assert e.m * (up - dn) / (2 * h) == pytest.approx(g.c[i], rel=1e-6, abs=1e-10)


def test_sphere_gradient_is_tangent(rng):
    e, data = kink_free_instance(rng)
    g = gradient(e, data, ObjectiveConfig())
    np.testing.assert_allclose(np.sum(g.z * e.z, axis=1), 0.0, atol=1e-15)


def test_tanh_euclidean_gradient_fd(rng):
    for _ in range(5):
        e = init_ensemble(5, 3, "gaussian", rng, activation="tanh", mode="euclidean")
        X = sphere.sample_uniform_sphere(3, rng, size=6)
        data = Dataset(X, rng.standard_normal(6))
        assert directional_check(e, data, ObjectiveConfig("empirical", 0.02, False, 3), rng) < 1e-6


def test_population_equals_empirical_in_the_limit(rng):
    e = init_ensemble(4, D, "gaussian", rng)
    t = Target.from_teacher(make_teacher(D, rng))
    data = make_dataset(t, 200_000, rng)
    pop = loss(e, t, ObjectiveConfig("population", 0.0, False, D)).fit
    emp = loss(e, data, ObjectiveConfig("empirical", 0.0, False, D)).fit
    assert emp == pytest.approx(pop, rel=0.02)


def test_rescale_multiplies_everything(rng):
    e, data = kink_free_instance(rng)
    a = loss(e, data, ObjectiveConfig("empirical", 0.1, False, D))
    b = loss(e, data, ObjectiveConfig("empirical", 0.1, True, D))
    assert b.total == pytest.approx(D * a.total)
    ga = gradient(e, data, ObjectiveConfig("empirical", 0.1, False, D))
    gb = gradient(e, data, ObjectiveConfig("empirical", 0.1, True, D))
    np.testing.assert_allclose(gb.c, D * ga.c)


def test_loss_problem_type_checked(rng):
    e, data = kink_free_instance(rng)
    with pytest.raises(TypeError):
        gradient(e, data, ObjectiveConfig("population"))
    with pytest.raises(ValueError):
        ObjectiveConfig("hinge")
    with pytest.raises(ValueError):
        ObjectiveConfig(lam=-1)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 3)), np.array([np.nan]))


def test_hessian_fd_tanh(rng):
    d = 3
    c = rng.standard_normal(4)
    z = rng.standard_normal((4, d + 1))
    X = sphere.sample_uniform_sphere(d, rng, size=7)
    r = rng.standard_normal(7)
    lam, scale = 0.03, 2.0
    H = potential_hessians(c, z, X, r, "tanh", lam, scale)
    h = 1e-6
    for i in range(4):
        num = np.zeros((d + 2, d + 2))
        for k in range(d + 2):
            cp, zp, cm, zm = c.copy(), z.copy(), c.copy(), z.copy()
            if k == 0:
                cp[i] += h
                cm[i] -= h
            else:
                zp[i, k - 1] += h
                zm[i, k - 1] -= h
            gp = potential_grad(cp, zp, X, r, "tanh", "euclidean", lam, scale)
            gm = potential_grad(cm, zm, X, r, "tanh", "euclidean", lam, scale)
            num[:, k] = (np.concatenate([[gp.c[i]], gp.z[i]]) - np.concatenate([[gm.c[i]], gm.z[i]])) / (2 * h)
        np.testing.assert_allclose(H[i], num, atol=1e-7)
        np.testing.assert_allclose(H[i], H[i].T, atol=1e-15)


def test_single_hessian_and_defect(rng):
    e = init_ensemble(5, 3, "gaussian", rng, activation="tanh", mode="euclidean")
    X = sphere.sample_uniform_sphere(3, rng, size=6)
    data = Dataset(X, rng.standard_normal(6))
    cfg = ObjectiveConfig("empirical", 0.0, False, 3)
    H0 = potential_hessian(Neuron(e.c[0], e.z[0]), e, data, cfg)
    r = e.evaluate(X) - data.values
    np.testing.assert_allclose(H0, potential_hessians(e.c, e.z, X, r, "tanh", 0.0, 1.0)[0])
    defect = curvature_defect(e, data, cfg)
    lam_min = [np.linalg.eigvalsh(h)[0] for h in potential_hessians(e.c, e.z, X, r, "tanh", 0.0, 1.0)]
    assert defect == pytest.approx(-np.mean(np.minimum(lam_min, 0)), abs=1e-12)
    assert defect >= 0
    with pytest.raises(NotImplementedError):
        potential_hessian(Neuron(e.c[0], e.z[0]), e, data, ObjectiveConfig("population", d=3))
