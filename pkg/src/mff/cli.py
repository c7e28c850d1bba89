"""Command line entry point: ``mff run | selftest | bound | clt``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config, experiments, io, sphere
from .ensemble import Target, make_teacher, population_inner, q_norm
from .fluctuation import POPULATION, mc_bound


def _config_error(msg: str) -> int:
    print(json.dumps({"error": "config", "message": msg}), file=sys.stderr)
    return experiments.EXIT_CONFIG


def _load(args, kind: str | None = None):
    cfg = config.load(args.config, args.override)
    if kind is not None and cfg["kind"] != kind:
        raise config.ConfigError(f"key 'kind': expected {kind!r}, got {cfg['kind']!r}")
    return cfg


def cmd_run(args, kind=None) -> int:
    try:
        cfg = _load(args, kind)
    except config.ConfigError as exc:
        return _config_error(str(exc))
    out = Path(args.out or cfg["output_dir"])
    res = experiments.run_experiment(cfg, out, workers=args.threads)
    print(json.dumps({"status": res.status, "output": str(out)}))
    return res.status


def cmd_selftest(args) -> int:
    cfg = config.validate({"kind": "kernel_selftest", "d": args.d, "mc_samples": args.samples, "base_seed": args.seed})
    res = experiments.run_kernel_selftest(cfg, Path(args.out) if args.out else None)
    if args.out:
        experiments.write_manifest(Path(args.out), res.status)
    for c in res.summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: closed={c['closed_form']:.10g} "
              f"oracle={c['oracle']:.10g} z={c['z_score']:.2f}")
    return res.status


def cmd_bound(args) -> int:
    if args.teacher:
        rng = np.random.default_rng(config.teacher_seed(args.seed))
        e = make_teacher(args.d, rng, m_t=args.width, angle=args.angle)
        target = Target.from_teacher(e)
    elif args.ensemble:
        try:
            e = io.read_ensemble_csv(args.ensemble)
        except (OSError, ValueError) as exc:
            return _config_error(f"{args.ensemble}: {exc}")
        target = Target.from_teacher(e)
    else:
        return _config_error("give an ensemble CSV or --teacher")
    out = {
        "m": e.m,
        "d": e.d,
        "selfnorm": sphere.relu_selfnorm(e.d),
        "f_sq": population_inner(e, e, e.d),
        "mc_bound": mc_bound(target, POPULATION),
        "tv_norm": q_norm(e, 1),
        "two_norm": float(np.sqrt(q_norm(e, 2))),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return experiments.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mff", description="Mean-field fluctuation experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_run_args(p):
        p.add_argument("config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker processes, one run each")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    add_run_args(sub.add_parser("run", help="run an experiment config"))
    add_run_args(sub.add_parser("clt", help="run a clt_verify config"))

    p = sub.add_parser("selftest", help="closed forms vs Monte-Carlo oracles")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--out")

    p = sub.add_parser("bound", help="Monte-Carlo resampling bound of an ensemble")
    p.add_argument("ensemble", nargs="?")
    p.add_argument("--teacher", action="store_true", help="use the seeded teacher instead of a file")
    p.add_argument("--angle", type=float, default=None)
    p.add_argument("--width", type=int, default=2)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--seed", type=int, default=0, help="base seed of the teacher stream")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in ("run", "clt") and args.threads < 1:
        return _config_error("--threads must be >= 1")
    if args.command == "run":
        return cmd_run(args)
    if args.command == "clt":
        return cmd_run(args, kind="clt_verify")
    if args.command == "selftest":
        return cmd_selftest(args)
    return cmd_bound(args)


if __name__ == "__main__":
    sys.exit(main())
