import numpy as np
import pytest

from mff import sphere
from mff.ensemble import Target, init_ensemble, make_teacher
from mff.flow import NumericalFailure, TrainConfig, gd_step, snapshot_epochs, train
from mff.objective import Dataset, ObjectiveConfig, loss, make_dataset

D = 16


def test_snapshot_grid():
    assert snapshot_epochs(10, 4) == [0, 1, 2, 4, 8, 10]
    assert snapshot_epochs(1, 100) == [0, 1]
    g = snapshot_epochs(5000, 250)
    assert g[0] == 0 and g[-1] == 5000 and 4096 in g and 4750 in g


def test_config_validation():
    obj = ObjectiveConfig()
    for bad in (dict(epochs=0), dict(lr=0.0), dict(m=0), dict(snapshot_stride=0)):
        kw = dict(m=4, epochs=2, lr=1.0, objective=obj) | bad
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def small_problem(rng, n=16):
    t = Target.from_teacher(make_teacher(D, rng))
    return t, make_dataset(t, n, rng)


def test_records_and_snapshots(rng):
    t, data = small_problem(rng)
    cfg = TrainConfig(m=8, epochs=20, lr=1.0, objective=ObjectiveConfig("empirical", 0.0, True, D), seed=3, snapshot_stride=10)
    res = train(cfg, data, population_target=t)
    assert [r.epoch for r in res.records] == list(range(21))
    assert sorted(res.snapshots) == snapshot_epochs(20, 10)
    assert res.records[-1].total == pytest.approx(loss(res.final, data, cfg.objective).total)
    assert all(r.wall_time == 0.0 for r in res.records)
    # population fit only on snapshot epochs for ERM runs
    assert np.isnan(res.records[3].population_fit) and np.isfinite(res.records[4].population_fit)
    np.testing.assert_allclose(np.linalg.norm(res.final.z, axis=1), 1.0, atol=1e-12)


def test_record_zero_is_initialization(rng):
    t, data = small_problem(rng)
    obj = ObjectiveConfig("empirical", 0.0, True, D)
    init = init_ensemble(8, D, "gaussian", np.random.default_rng(3))
    res = train(TrainConfig(m=8, epochs=3, lr=1.0, objective=obj, seed=3), data)
    assert res.records[0].total == loss(init, data, obj).total
    np.testing.assert_array_equal(res.snapshots[0].c, init.c)


def test_seeded_reproducible(rng):
    t, data = small_problem(rng)
    cfg = TrainConfig(m=8, epochs=10, lr=1.0, objective=ObjectiveConfig("empirical", 0.0, True, D), seed=11)
    a, b = train(cfg, data), train(cfg, data)
    np.testing.assert_array_equal(a.final.c, b.final.c)
    np.testing.assert_array_equal(a.final.z, b.final.z)


def test_small_steps_decrease_loss(rng):
    t, _ = small_problem(rng)
    cfg = TrainConfig(m=16, epochs=50, lr=0.5, objective=ObjectiveConfig("population", 0.01, True, D), seed=1)
    tot = [r.total for r in train(cfg, t).records]
    assert all(b <= a + 1e-15 for a, b in zip(tot, tot[1:]))


def test_step_halving_converges(rng):
    # the Euler trajectory at physical time 2 is first order in lr
    t, data = small_problem(rng)
    obj = ObjectiveConfig("empirical", 0.0, True, D)
    init = init_ensemble(8, D, "gaussian", rng)
    finals = []
    for lr in (0.1, 0.05, 0.025):
        res = train(TrainConfig(m=8, epochs=int(round(2 / lr)), lr=lr, objective=obj), data, init=init)
        finals.append(res.final.evaluate(data.points))
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert 1.5 < e1 / e2 < 3.0


def test_gd_step_matches_train(rng):
    t, data = small_problem(rng)
    obj = ObjectiveConfig("empirical", 0.0, True, D)
    init = init_ensemble(8, D, "gaussian", rng)
    res = train(TrainConfig(m=8, epochs=1, lr=0.7, objective=obj), data, init=init)
    np.testing.assert_array_equal(gd_step(init, data, obj, 0.7).c, res.final.c)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_keeps_partial(rng):
    X = sphere.sample_uniform_sphere(3, rng, size=5)
    data = Dataset(X, 100 * rng.standard_normal(5))
    init = init_ensemble(4, 3, "gaussian", rng, activation="tanh", mode="euclidean")
    cfg = TrainConfig(m=4, epochs=500, lr=1e3, objective=ObjectiveConfig("empirical", 0.0, False, 3), activation="tanh", mode="euclidean")
    with pytest.raises(NumericalFailure) as info:
        train(cfg, data, init=init)
    exc = info.value
    assert exc.epoch is not None and len(exc.partial.records) >= 1
