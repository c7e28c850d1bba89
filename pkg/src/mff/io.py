"""CSV formats for ensembles, datasets and trajectories.

Floats are written with 17 significant digits so every double round-trips
exactly.
"""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from .ensemble import Ensemble

FLOAT_FMT = "{:.17g}"

TRAJECTORY_FIELDS = ("epoch", "total", "fit", "reg", "tv_norm", "two_norm", "population_fit", "wall_time")


def fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


def _write_rows(path, header, rows) -> None:
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    atomic_write_text(path, buf.getvalue())


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_matrix(path, first: str) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != first:
            raise ValueError(f"{path}: header must start with {first!r}, got {header[:1]}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, arr


def write_ensemble_csv(path, e: Ensemble) -> None:
    header = ["c"] + [f"z_{k}" for k in range(e.z.shape[1])]
    _write_rows(path, header, np.column_stack([e.c, e.z]))


def read_ensemble_csv(path, activation: str = "relu", mode: str = "sphere") -> Ensemble:
    header, arr = _read_matrix(path, "c")
    d = len(header) - 2
    return Ensemble(arr[:, 0], arr[:, 1:], d, activation, mode)


def write_dataset_csv(path, points: np.ndarray, values: np.ndarray) -> None:
    header = ["y"] + [f"x_{k}" for k in range(points.shape[1])]
    _write_rows(path, header, np.column_stack([values, points]))


def read_dataset_csv(path):
    from .objective import Dataset

    header, arr = _read_matrix(path, "y")
    return Dataset(arr[:, 1:], arr[:, 0])


def write_trajectory_csv(path, records) -> None:
    _write_rows(path, TRAJECTORY_FIELDS, ([getattr(r, f) for f in TRAJECTORY_FIELDS] for r in records))
