"""Forward-Euler particle gradient descent and the epoch loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import sphere
from .ensemble import Ensemble, Target, init_ensemble, population_l2_error, q_norm
from .objective import Dataset, Gradient, ObjectiveConfig, Problem, loss_and_gradient


class NumericalFailure(FloatingPointError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    m: int
    epochs: int
    lr: float
    objective: ObjectiveConfig
    init: str | tuple = "gaussian"
    seed: int = 0
    snapshot_stride: int = 1000
    activation: str = "relu"
    mode: str = "sphere"
    record_wall_time: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class TrajectoryRecord:
    epoch: int
    total: float
    fit: float
    reg: float
    tv_norm: float
    two_norm: float
    population_fit: float = float("nan")
    wall_time: float = 0.0


@dataclass
class TrainResult:
    final: Ensemble
    records: list[TrajectoryRecord]
    snapshots: dict[int, Ensemble] = field(default_factory=dict)


def snapshot_epochs(epochs: int, stride: int) -> list[int]:
    """Epochs {0, 1, 2, 4, ...} together with every multiple of ``stride`` and the last one."""
    grid = {0, epochs}
    k = 1
    while k <= epochs:
        grid.add(k)
        k *= 2
    grid.update(range(stride, epochs + 1, stride))
    return sorted(grid)


def apply_step(e: Ensemble, g: Gradient, lr: float, epoch: int | None = None) -> Ensemble:
    c = e.c - lr * g.c
    z = e.z - lr * g.z
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(z))):
        raise NumericalFailure("non-finite parameters after gradient step", epoch)
    if e.mode == "sphere":
        z = sphere.normalize(z)
    return e.with_params(c, z)


def gd_step(e: Ensemble, problem: Problem, cfg: ObjectiveConfig, lr: float, epoch: int | None = None) -> Ensemble:
    """One Euler step theta_i <- theta_i - lr * grad V(theta_i, mu^(m))."""
    if not lr > 0:
        raise ValueError("lr must be > 0")
    _, g = loss_and_gradient(e, problem, cfg)
    return apply_step(e, g, lr, epoch)


def _population_fit(e: Ensemble, target: Target | None, cfg: ObjectiveConfig) -> float:
    if target is None or e.activation != "relu" or e.mode != "sphere":
        return float("nan")
    return cfg.scale * 0.5 * population_l2_error(e, target, e.d)


def train(
    cfg: TrainConfig,
    problem: Problem,
    init: Ensemble | None = None,
    population_target: Target | None = None,
) -> TrainResult:
    """Run ``cfg.epochs`` GD steps from a seeded initialization.

    Record ``k`` describes the ensemble after ``k`` steps (record 0 is the
    initialization). For empirical runs the population fit is only evaluated
    on snapshot epochs.
    """
    obj = cfg.objective
    if init is None:
        rng = np.random.default_rng(cfg.seed)
        init = init_ensemble(cfg.m, obj.d, cfg.init, rng, cfg.activation, cfg.mode)
    if population_target is None and isinstance(problem, Target):
        population_target = problem
    snap_set = set(snapshot_epochs(cfg.epochs, cfg.snapshot_stride))
    snapshots: dict[int, Ensemble] = {}
    records: list[TrajectoryRecord] = []
    t0 = time.perf_counter()
    e = init

    def record(epoch, parts):
        if epoch in snap_set:
            snapshots[epoch] = e
        if obj.loss == "population":
            pop = parts.fit
        elif epoch in snap_set:
            pop = _population_fit(e, population_target, obj)
        else:
            pop = float("nan")
        if not np.isfinite(parts.total):
            raise NumericalFailure("non-finite loss", epoch)
        records.append(
            TrajectoryRecord(
                epoch,
                parts.total,
                parts.fit,
                parts.reg,
                q_norm(e, 1),
                float(np.sqrt(q_norm(e, 2))),
                pop,
                time.perf_counter() - t0 if cfg.record_wall_time else 0.0,
            )
        )

    try:
        for epoch in range(cfg.epochs):
            parts, g = loss_and_gradient(e, problem, obj)
            record(epoch, parts)
            e = apply_step(e, g, cfg.lr, epoch + 1)
        parts, _ = loss_and_gradient(e, problem, obj)
        record(cfg.epochs, parts)
    except NumericalFailure as exc:
        # keep what was computed so callers can write partial outputs
        exc.partial = TrainResult(e, records, snapshots)
        raise
    return TrainResult(e, records, snapshots)
