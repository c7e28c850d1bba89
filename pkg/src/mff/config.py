"""Experiment configuration: JSON schema, defaults, overrides and the seed schedule."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

KINDS = (
    "student_teacher_pop",
    "student_teacher_erm",
    "nonplanted_pop",
    "clt_verify",
    "bound_report",
    "kernel_selftest",
)

SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "patternProperties": {"^_": {}},
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "d": {"type": "integer", "minimum": 1},
        "m_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "kappa": {"type": "integer", "minimum": 1},
        "lambda": {"type": "number", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "init": {
            "oneOf": [
                {"enum": ["gaussian", "zero"]},
                {
                    "type": "object",
                    "properties": {"constant": {"type": "number"}},
                    "required": ["constant"],
                    "additionalProperties": False,
                },
            ]
        },
        "n": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0, "maximum": (1 << 22) - 1},
        "output_dir": {"type": "string"},
        "rescale_by_d": {"type": "boolean"},
        "teacher_width": {"type": "integer", "minimum": 1},
        "teacher_angle": {"type": ["number", "null"]},
        "snapshot_stride": {"type": "integer", "minimum": 1},
        "write_snapshots": {"type": "boolean"},
        "record_wall_time": {"type": "boolean"},
        "minimizer_check": {"type": "boolean"},
        "quad_nodes": {"type": "integer", "minimum": 8},
        "M": {"type": "integer", "minimum": 2},
        "activation": {"enum": ["relu", "tanh"]},
        "trials": {"type": "integer", "minimum": 1},
        "clt_lr": {"type": "number", "exclusiveMinimum": 0},
        "clt_epochs": {"type": "integer", "minimum": 1},
        "volterra_horizon": {"type": "number", "exclusiveMinimum": 0},
        "volterra_lrs": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "mc_samples": {"type": "integer", "minimum": 2},
    },
}

DEFAULTS = {
    "d": 16,
    "m_list": [128],
    "kappa": 8,
    "lambda": 0.0,
    "epochs": 1000,
    "lr": 1.0,
    "init": "gaussian",
    "n": 32,
    "base_seed": 0,
    "output_dir": "out",
    "rescale_by_d": True,
    "teacher_width": 2,
    "teacher_angle": None,
    "snapshot_stride": 1000,
    "write_snapshots": True,
    "record_wall_time": False,
    "minimizer_check": False,
    "quad_nodes": 512,
    "M": 64,
    "activation": "tanh",
    "trials": 20,
    "clt_lr": 0.2,
    "clt_epochs": 100,
    "volterra_horizon": 10.0,
    "volterra_lrs": [0.1, 0.05],
    "mc_samples": 1_000_000,
}

# kinds that use the clt defaults for d / n
CLT_DEFAULTS = {"d": 3, "n": 8, "m_list": [16, 64, 256], "lambda": 0.0, "rescale_by_d": False}


class ConfigError(ValueError):
    def __init__(self, message: str, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


def _format_error(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        return f"unknown key at {where}: {err.message}"
    return f"key {where!r}: {err.message}"


def validate(raw: dict) -> dict:
    """Validate and fill defaults. Raises ConfigError naming the offending key."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        keys = [str(e.absolute_path[0]) if e.absolute_path else _unknown_key(e, raw) for e in errors]
        raise ConfigError("; ".join(_format_error(e) for e in errors), keys)
    cfg = copy.deepcopy(DEFAULTS)
    if raw["kind"] == "clt_verify":
        cfg.update(CLT_DEFAULTS)
    cfg.update({k: v for k, v in raw.items() if not k.startswith("_")})
    if list(cfg["m_list"]) != sorted(cfg["m_list"]) or len(set(cfg["m_list"])) != len(cfg["m_list"]):
        raise ConfigError("key 'm_list': must be strictly ascending", ["m_list"])
    return cfg


def _unknown_key(err, raw) -> str:
    if err.validator == "additionalProperties":
        extra = [k for k in raw if k not in SCHEMA["properties"] and not k.startswith("_")]
        if extra:
            return extra[0]
    if err.validator == "required":
        return "kind"
    return ""


def _key_line(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def load(path, overrides=()) -> dict:
    """Read a JSON config file, apply ``key=value`` overrides, validate."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    try:
        return validate(raw)
    except ConfigError as exc:
        lines = [(k, _key_line(text, k)) for k in exc.keys if k]
        where = ", ".join(f"{path}:{n} ({k})" for k, n in lines if n is not None)
        if where:
            raise ConfigError(f"{where}: {exc}", exc.keys) from None
        raise


def init_scheme(cfg: dict):
    init = cfg["init"]
    if isinstance(init, dict):
        return ("constant", float(init["constant"]))
    return init


# ----------------------------------------------------------------- seeds

_MASK = (1 << 64) - 1
SEED_BITS = 22
INDEX_BITS = 21
TEACHER_STREAM = (1 << INDEX_BITS) - 1
DATASET_STREAM = (1 << INDEX_BITS) - 2
MAX_INDEX = DATASET_STREAM - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output; a bijection on 64-bit integers."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _pack(base_seed: int, width_index: int, run_index: int) -> int:
    if not 0 <= base_seed < (1 << SEED_BITS):
        raise ValueError(f"base_seed must be in [0, 2^{SEED_BITS})")
    if width_index < 0 or run_index < 0:
        raise ValueError("indices must be >= 0")
    if run_index >= (1 << INDEX_BITS) or width_index >= (1 << INDEX_BITS):
        raise ValueError("index out of range")
    return (base_seed << (2 * INDEX_BITS)) | (width_index << INDEX_BITS) | run_index


def seed_schedule(base_seed: int, width_index: int, run_index: int) -> int:
    """Seed of run ``run_index`` at width ``width_index``: splitmix64 of the packed triple.

    Packing is injective for in-range arguments and splitmix64 is a bijection,
    so distinct (width, run) pairs never share a seed.
    """
    if width_index > MAX_INDEX:
        raise ValueError("width index collides with a reserved stream")
    return splitmix64(_pack(base_seed, width_index, run_index))


def teacher_seed(base_seed: int) -> int:
    """Reserved stream: the teacher does not depend on the sweep grid."""
    return splitmix64(_pack(base_seed, TEACHER_STREAM, 0))


def dataset_seed(base_seed: int) -> int:
    return splitmix64(_pack(base_seed, DATASET_STREAM, 0))
