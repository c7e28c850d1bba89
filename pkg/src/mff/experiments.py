"""Sweep orchestration: runs over widths and seeds, fluctuation reports, plot data."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, clt, io, sphere
from .config import dataset_seed, init_scheme, seed_schedule, teacher_seed
from .ensemble import Ensemble, Target, make_teacher, population_inner, q_norm
from .flow import NumericalFailure, TrainConfig, train
from .fluctuation import POPULATION, fluctuation_report, mc_bound, minimizer_inequalities, variation_norm_upper
from .objective import Dataset, ObjectiveConfig, make_dataset
from .selftest import run_selftest

log = logging.getLogger("mff")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3

TRAINING_KINDS = ("student_teacher_pop", "student_teacher_erm", "nonplanted_pop")


def provenance(cfg: dict) -> dict:
    """Everything needed to regenerate an output file. The output path is left out on purpose."""
    return {
        "package": "mff",
        "version": __version__,
        "config": {k: v for k, v in sorted(cfg.items()) if k != "output_dir"},
    }


# ----------------------------------------------------------------- problem setup


@dataclass
class Problem:
    target: Target
    objective: ObjectiveConfig
    data: Dataset | None = None

    @property
    def problem(self):
        return self.data if self.objective.loss == "empirical" else self.target


def build_teacher(cfg: dict) -> Ensemble:
    rng = np.random.default_rng(teacher_seed(cfg["base_seed"]))
    return make_teacher(cfg["d"], rng, m_t=cfg["teacher_width"], angle=cfg["teacher_angle"])


def build_problem(cfg: dict) -> Problem:
    kind, d = cfg["kind"], cfg["d"]
    if kind == "nonplanted_pop":
        target = Target.great_circle(d, cfg["quad_nodes"])
    else:
        target = Target.from_teacher(build_teacher(cfg))
    if kind == "student_teacher_erm":
        obj = ObjectiveConfig("empirical", cfg["lambda"], cfg["rescale_by_d"], d)
        data = make_dataset(target, cfg["n"], np.random.default_rng(dataset_seed(cfg["base_seed"])))
        return Problem(target, obj, data)
    return Problem(target, ObjectiveConfig("population", cfg["lambda"], cfg["rescale_by_d"], d))


def target_summary(p: Problem) -> dict:
    t = p.target
    out = {"kind": t.kind, "f_star_sq": population_inner(t, t, t.d), "mc_bound_population": mc_bound(t, POPULATION)}
    out["variation_norm_upper"] = variation_norm_upper(t)
    if t.kind == "teacher":
        e = t.teacher
        out["tv_norm"] = q_norm(e, 1)
        out["two_norm"] = float(np.sqrt(q_norm(e, 2)))
        if e.m == 2:
            out["teacher_angle"] = float(np.arccos(np.clip(e.z[0] @ e.z[1], -1.0, 1.0)))
    else:
        # uniform measure on the circle with c = 1
        out["tv_norm"] = out["two_norm"] = 1.0
    if p.data is not None:
        out["mc_bound_empirical"] = mc_bound(t, p.data)
    return out


# ----------------------------------------------------------------- single run


@dataclass
class RunOutcome:
    m: int
    run: int
    seed: int
    snapshots: dict = field(default_factory=dict)  # epoch -> (c, z)
    final: tuple | None = None
    failure: dict | None = None
    seconds: float = 0.0


def run_dir(out: Path, m: int, run: int) -> Path:
    return out / "runs" / f"m{m}" / f"run{run:03d}"


def _run_one(cfg: dict, width_index: int, run_index: int, out: str) -> RunOutcome:
    """Worker body: one (width, seed) run writing only to its own directory."""
    with threadpool_limits(1):
        m = cfg["m_list"][width_index]
        seed = seed_schedule(cfg["base_seed"], width_index, run_index)
        p = build_problem(cfg)
        tc = TrainConfig(
            m=m,
            epochs=cfg["epochs"],
            lr=cfg["lr"],
            objective=p.objective,
            init=init_scheme(cfg),
            seed=seed,
            snapshot_stride=cfg["snapshot_stride"],
            record_wall_time=cfg["record_wall_time"],
        )
        rd = run_dir(Path(out), m, run_index)
        outcome = RunOutcome(m, run_index, seed)
        t0 = time.perf_counter()
        try:
            res = train(tc, p.problem, population_target=p.target)
        except NumericalFailure as exc:
            res = exc.partial
            outcome.failure = {"m": m, "run": run_index, "seed": seed, "epoch": exc.epoch, "message": str(exc)}
        outcome.seconds = time.perf_counter() - t0
        io.write_trajectory_csv(rd / "trajectory.csv", res.records)
        if cfg["write_snapshots"]:
            for ep, e in sorted(res.snapshots.items()):
                io.write_ensemble_csv(rd / "snapshots" / f"epoch{ep:07d}.csv", e)
        outcome.snapshots = {ep: (e.c, e.z) for ep, e in res.snapshots.items()}
        if outcome.failure is None:
            io.write_ensemble_csv(rd / "final.csv", res.final)
            outcome.final = (res.final.c, res.final.z)
        return outcome


def _as_ensemble(cz, d) -> Ensemble:
    return Ensemble(cz[0], cz[1], d)


# ----------------------------------------------------------------- sweep


def _mean_curves(out: Path, m: int, kappa: int) -> np.ndarray:
    """Per-epoch averages over runs of the trajectory columns."""
    cols = []
    for k in range(kappa):
        rows = (run_dir(out, m, k) / "trajectory.csv").read_text().splitlines()[1:]
        cols.append(np.array([[float(v) for v in r.split(",")] for r in rows]).reshape(len(rows), len(io.TRAJECTORY_FIELDS)))
    n = min(a.shape[0] for a in cols)
    return np.mean([a[:n] for a in cols], axis=0)


def _write_dat(path: Path, header: str, rows) -> None:
    lines = ["# " + header]
    lines += [" ".join(io.fmt(v) for v in row) for row in rows]
    io.atomic_write_text(path, "\n".join(lines) + "\n")


def last_half_mean(epochs, values) -> float:
    epochs = np.asarray(epochs)
    values = np.asarray(values)
    mask = epochs >= epochs[-1] / 2
    return float(np.mean(values[mask]))


def write_plot_script(out: Path, m_list, bound: float, erm: bool, baselines: dict) -> None:
    """Four panels: m * fluctuation with the bound, loss, TV norm, 2-norm (teacher dashed)."""
    fl = ", \\\n     ".join(
        [f"'fluct_m{m}.dat' every ::1 using 1:2 with lines lw 2 title 'm={m}'" for m in m_list]
        + ([f"'fluct_m{m}.dat' every ::1 using 1:3 with lines dt 2 notitle" for m in m_list] if erm else [])
        + [f"{io.fmt(bound)} with lines dt 2 lc rgb 'black' title 'MC bound'"]
    )

    def panel(col):
        return ", \\\n     ".join(
            f"'curves_m{m}.dat' every ::1 using 1:{col} with lines lw 2 title 'm={m}'" for m in m_list
        )

    loss, tv, two = panel(2), panel(5), panel(6)
    tv += f", \\\n     {io.fmt(baselines['tv_norm'])} with lines dt 2 lc rgb 'black' title 'teacher'"
    two += f", \\\n     {io.fmt(baselines['two_norm'])} with lines dt 2 lc rgb 'black' title 'teacher'"
    script = f"""# gnuplot script; run from this directory: gnuplot plot.gp
set terminal pngcairo size 1800,400
set output 'panels.png'
set multiplot layout 1,4
set logscale x
set xlabel 'epoch'
set logscale y
set title 'average fluctuation x m'
plot {fl}
set title 'average loss'
plot {loss}
unset logscale y
set title 'average TV norm'
plot {tv}
set title 'average 2-norm'
plot {two}
unset multiplot
"""
    io.atomic_write_text(out / "plot.gp", script)


@dataclass
class SweepResult:
    status: int
    summary: dict


def run_training(cfg: dict, out: Path, workers: int = 1) -> SweepResult:
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg)
    p = build_problem(cfg)
    tsum = target_summary(p)
    if p.target.kind == "teacher":
        io.write_ensemble_csv(out / "teacher.csv", p.target.teacher)
    if p.data is not None:
        io.write_dataset_csv(out / "dataset.csv", p.data.points, p.data.values)

    jobs = [(wi, k) for wi in range(len(cfg["m_list"])) for k in range(cfg["kappa"])]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_one, cfg, wi, k, str(out)) for wi, k in jobs]
            outcomes = [f.result() for f in futs]
    else:
        outcomes = [_run_one(cfg, wi, k, str(out)) for wi, k in jobs]
    for o in outcomes:
        log.info("m=%d run=%d seed=%d %.2fs%s", o.m, o.run, o.seed, o.seconds, " FAILED" if o.failure else "")
    log.info("sweep wall time %.1fs", time.perf_counter() - t0)

    failures = [o.failure for o in outcomes if o.failure]
    bound = tsum["mc_bound_population"]
    erm = p.data is not None
    widths = {}
    with threadpool_limits(1):
        for m in cfg["m_list"]:
            runs = [o for o in outcomes if o.m == m]
            entry = {"kappa": len(runs), "failed_runs": sorted(o.run for o in runs if o.failure)}
            curves = _mean_curves(out, m, len(runs))
            _write_dat(
                out / f"curves_m{m}.dat",
                "epoch total fit reg tv_norm two_norm population_fit",
                curves[:, :7],
            )
            if len(curves):
                entry["final_loss"] = {"total": curves[-1, 1], "fit": curves[-1, 2], "reg": curves[-1, 3]}
            if entry["failed_runs"] or len(runs) < 2:
                widths[str(m)] = entry
                continue
            snaps = [{ep: _as_ensemble(cz, cfg["d"]) for ep, cz in o.snapshots.items()} for o in runs]
            rep = fluctuation_report(snaps, p.target, data=p.data, population=True)
            io.write_json(out / f"fluct_m{m}.json", {"provenance": prov, **rep.to_json()})
            pop_scaled = [m * v for v in rep.fluct_pop]
            emp_scaled = [m * v for v in rep.fluct_emp]
            _write_dat(
                out / f"fluct_m{m}.dat",
                "epoch m*fluct_population m*fluct_empirical",
                zip(rep.epochs, pop_scaled, emp_scaled),
            )
            entry["m_fluct_population_final"] = pop_scaled[-1]
            entry["m_fluct_population_last_half_mean"] = last_half_mean(rep.epochs, pop_scaled)
            entry["below_mc_bound"] = bool(entry["m_fluct_population_last_half_mean"] <= bound)
            if erm:
                entry["m_fluct_empirical_final"] = emp_scaled[-1]
            if cfg["minimizer_check"] and cfg["lambda"] > 0:
                final = _as_ensemble(runs[0].final, cfg["d"])
                chk = minimizer_inequalities(
                    final, cfg["lambda"], variation_norm_upper(p.target), p.problem, np.random.default_rng(0)
                )
                entry["minimizer_check"] = chk.as_dict()
            widths[str(m)] = entry

    write_plot_script(out, cfg["m_list"], bound, erm, tsum)
    summary = {"provenance": prov, "target": tsum, "widths": widths, "failures": failures}
    io.write_json(out / "summary.json", summary)
    status = EXIT_OK
    if failures:
        io.write_json(out / "failure.json", {"provenance": prov, "failures": failures})
        status = EXIT_NUMERICAL
    return SweepResult(status, summary)


# ----------------------------------------------------------------- other kinds


def run_clt(cfg: dict, out: Path) -> SweepResult:
    inst = clt.make_instance(cfg["M"], cfg["d"], cfg["n"], seed=cfg["base_seed"], lam=cfg["lambda"], activation=cfg["activation"])
    with threadpool_limits(1):
        scaling = clt.clt_scaling(inst, cfg["m_list"], cfg["trials"], cfg["clt_lr"], cfg["clt_epochs"], seed=cfg["base_seed"])
        lrs = sorted(cfg["volterra_lrs"], reverse=True)
        volterra = clt.volterra_by_lr(inst, cfg["volterra_horizon"], lrs, seed=cfg["base_seed"])
    res = [volterra[repr(float(lr))] for lr in lrs]
    ratios = [a / b for a, b in zip(res, res[1:])]
    checks = {
        "slope_in_band": bool(-0.8 <= scaling["fitted_slope"] <= -0.2),
        "volterra_first_order": bool(all(1.5 <= r <= 3.0 for r in ratios)),
    }
    summary = {
        "provenance": provenance(cfg),
        "prediction": {"m_list": cfg["m_list"], **scaling},
        "volterra": {"lrs": lrs, "max_residual": res, "ratios": ratios},
        "checks": checks,
    }
    io.write_json(out / "clt_report.json", summary)
    io.write_json(out / "summary.json", summary)
    return SweepResult(EXIT_OK if all(checks.values()) else EXIT_CHECK, summary)


def run_bound_report(cfg: dict, out: Path) -> SweepResult:
    teacher = build_teacher(cfg)
    io.write_ensemble_csv(out / "teacher.csv", teacher)
    summary = {
        "provenance": provenance(cfg),
        "selfnorm": sphere.relu_selfnorm(cfg["d"]),
        "teacher": target_summary(Problem(Target.from_teacher(teacher), None)),
        "great_circle": target_summary(Problem(Target.great_circle(cfg["d"], cfg["quad_nodes"]), None)),
    }
    io.write_json(out / "summary.json", summary)
    return SweepResult(EXIT_OK, summary)


def run_kernel_selftest(cfg: dict, out: Path | None) -> SweepResult:
    checks = run_selftest(cfg["d"], cfg["mc_samples"], seed=cfg["base_seed"])
    summary = {"provenance": provenance(cfg), "checks": [c.as_dict() for c in checks], "passed": all(c.passed for c in checks)}
    if out is not None:
        io.write_json(out / "summary.json", summary)
    return SweepResult(EXIT_OK if summary["passed"] else EXIT_CHECK, summary)


def run_experiment(cfg: dict, out: Path, workers: int = 1) -> SweepResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", provenance(cfg))
    kind = cfg["kind"]
    if kind in TRAINING_KINDS:
        res = run_training(cfg, out, workers)
    elif kind == "clt_verify":
        res = run_clt(cfg, out)
    elif kind == "bound_report":
        res = run_bound_report(cfg, out)
    else:
        res = run_kernel_selftest(cfg, out)
    write_manifest(out, res.status)
    return res


def write_manifest(out: Path, status: int) -> None:
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    io.write_json(out / "manifest.json", {"status": status, "files": files})
