"""Particle ensembles, targets and population-space inner products."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import sphere

ACTIVATIONS = ("relu", "tanh")
MODES = ("sphere", "euclidean")


def act(s: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(s, 0.0)
    if activation == "tanh":
        return np.tanh(s)
    raise ValueError(f"unknown activation {activation!r}")


def act_prime(s: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (s > 0.0).astype(float)
    if activation == "tanh":
        return 1.0 - np.tanh(s) ** 2
    raise ValueError(f"unknown activation {activation!r}")


def act_second(s: np.ndarray, activation: str) -> np.ndarray:
    # relu: zero off the kink (a.e. convention)
    if activation == "relu":
        return np.zeros_like(s)
    if activation == "tanh":
        th = np.tanh(s)
        return -2.0 * th * (1.0 - th**2)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass(frozen=True)
class Neuron:
    c: float
    z: np.ndarray


@dataclass(frozen=True)
class Ensemble:
    """m neurons theta_i = (c_i, z_i); represents f = (1/m) sum c_i act(<z_i, x>).

    ``c`` has shape (m,), ``z`` has shape (m, d+1).
    """

    c: np.ndarray
    z: np.ndarray
    d: int
    activation: str = "relu"
    mode: str = "sphere"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "z", z)
        if c.size < 1:
            raise ValueError("ensemble needs m >= 1 neurons")
        if z.shape != (c.size, sphere.ambient_dim(self.d)):
            raise ValueError(f"z has shape {z.shape}, expected {(c.size, sphere.ambient_dim(self.d))}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.activation == "relu" and self.mode != "sphere":
            raise ValueError("relu activation requires sphere mode")
        if self.mode == "sphere":
            err = np.max(np.abs(np.linalg.norm(z, axis=1) - 1.0))
            if err > sphere.UNIT_TOL:
                raise ValueError(f"sphere-mode neuron off the unit sphere (|z|-1 = {err:.3g})")

    @property
    def m(self) -> int:
        return self.c.size

    def neuron(self, i: int) -> Neuron:
        return Neuron(float(self.c[i]), self.z[i].copy())

    def with_params(self, c: np.ndarray, z: np.ndarray) -> "Ensemble":
        return replace(self, c=c, z=z)

    def features(self, X: np.ndarray) -> np.ndarray:
        """act(<z_i, x_l>) as an (m, n) array."""
        return act(self.z @ np.atleast_2d(X).T, self.activation)

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        vals = self.c @ self.features(X) / self.m
        return vals[0] if single else vals


def init_ensemble(
    m: int,
    d: int,
    c_init: str | tuple = "gaussian",
    rng: np.random.Generator | None = None,
    activation: str = "relu",
    mode: str = "sphere",
) -> Ensemble:
    """Draw m neurons with z uniform on S^d and c per ``c_init``.

    ``c_init`` is ``"gaussian"`` (N(0,1)), ``"zero"`` or ``("constant", value)``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    z = sphere.sample_uniform_sphere(d, rng, size=m)
    kind, value = (c_init, None) if isinstance(c_init, str) else (c_init[0], c_init[1])
    if kind == "gaussian":
        c = rng.standard_normal(m)
    elif kind == "zero":
        c = np.zeros(m)
    elif kind == "constant":
        c = np.full(m, float(value))
    else:
        raise ValueError(f"unknown c_init {c_init!r}")
    return Ensemble(c, z, d, activation, mode)


def evaluate(e: Ensemble, x) -> float | np.ndarray:
    return e.evaluate(x)


def q_norm(e: Ensemble, q: float) -> float:
    """(1/m) sum |c_i|^q; q=1 is the TV-norm proxy, q=2 the squared 2-norm."""
    if q <= 0:
        raise ValueError("q must be positive")
    return float(np.mean(np.abs(e.c) ** q))


def two_norm(e: Ensemble) -> float:
    return float(np.sqrt(q_norm(e, 2)))


@dataclass(frozen=True)
class Target:
    """Target function f*: a planted teacher, the great-circle measure, or zero."""

    kind: str
    d: int
    teacher: Ensemble | None = None
    quad_nodes: int = sphere.DEFAULT_CIRCLE_NODES
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("teacher", "great_circle", "zero"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "teacher":
            if self.teacher is None:
                raise ValueError("teacher target needs an ensemble")
            if self.teacher.d != self.d:
                raise ValueError("teacher dimension differs from target dimension")

    @classmethod
    def from_teacher(cls, e: Ensemble) -> "Target":
        return cls("teacher", e.d, teacher=e)

    @classmethod
    def great_circle(cls, d: int, quad_nodes: int = sphere.DEFAULT_CIRCLE_NODES) -> "Target":
        return cls("great_circle", d, quad_nodes=quad_nodes)

    @classmethod
    def zero(cls, d: int) -> "Target":
        return cls("zero", d)

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "teacher":
            return self.teacher.evaluate(X)
        if self.kind == "great_circle":
            return sphere.great_circle_target_value(X)
        return np.zeros(X.shape[:-1])


def make_teacher(
    d: int,
    rng: np.random.Generator,
    m_t: int = 2,
    angle: float | None = None,
    activation: str = "relu",
    mode: str = "sphere",
) -> Ensemble:
    """Teacher with c_i = 1 and random directions.

    With ``angle`` set (two-neuron teachers only), z_2 is placed at that angle
    from z_1 in a random plane, which pins ||f*||^2 to a known value.
    """
    z = sphere.sample_uniform_sphere(d, rng, size=m_t)
    if angle is not None:
        if m_t != 2:
            raise ValueError("teacher angle only supported for m_t = 2")
        w = sphere.normalize(sphere.tangent_project(z[0], z[1]))
        z[1] = sphere.normalize(np.cos(angle) * z[0] + np.sin(angle) * w)
    return Ensemble(np.ones(m_t), z, d, activation, mode)


Operand = Union[Ensemble, Target]


def _require_closed_form(e: Ensemble) -> None:
    if e.activation != "relu" or e.mode != "sphere":
        raise NotImplementedError(
            f"no closed-form population kernel for activation={e.activation}, mode={e.mode}"
        )


def _as_atoms(a: Operand):
    """Reduce an operand to (weights*c, z) atoms, or the tags 'zero' / 'circle'."""
    if isinstance(a, Target):
        if a.kind == "zero":
            return "zero"
        if a.kind == "great_circle":
            return "circle"
        a = a.teacher
    _require_closed_form(a)
    return a.c / a.m, a.z


def population_inner(a: Operand, b: Operand, d: int) -> float:
    """<f_a, f_b> in L2 of the uniform measure on S^d (closed form)."""
    A, B = _as_atoms(a), _as_atoms(b)
    if (isinstance(A, str) and A == "zero") or (isinstance(B, str) and B == "zero"):
        return 0.0
    nodes = _circle_nodes(a, b)
    if isinstance(A, str) and isinstance(B, str):
        return sphere.great_circle_self_inner(d, nodes)
    if isinstance(A, str):
        A, B = B, A
    wa, za = A
    if isinstance(B, str):
        return float(wa @ sphere.great_circle_potential(za, d, nodes))
    wb, zb = B
    return float(wa @ sphere.arc_kernel_gram(za, zb, d) @ wb)


def _circle_nodes(a: Operand, b: Operand) -> int:
    for t in (a, b):
        if isinstance(t, Target) and t.kind == "great_circle":
            return t.quad_nodes
    return sphere.DEFAULT_CIRCLE_NODES


def population_l2_error(e: Operand, t: Operand, d: int) -> float:
    """||f_e - f_t||^2 in L2(nu)."""
    return population_inner(e, e, d) - 2.0 * population_inner(e, t, d) + population_inner(t, t, d)


def target_potential(t: Target, Z: np.ndarray) -> np.ndarray:
    """<relu(<z, .>), f*> for each row z of Z."""
    if t.kind == "zero":
        return np.zeros(Z.shape[0])
    if t.kind == "great_circle":
        return sphere.great_circle_potential(Z, t.d, t.quad_nodes)
    _require_closed_form(t.teacher)
    return sphere.arc_kernel_gram(Z, t.teacher.z, t.d) @ (t.teacher.c / t.teacher.m)


def target_potential_grad(t: Target, Z: np.ndarray) -> np.ndarray:
    """Tangent gradient of :func:`target_potential` for each row of Z."""
    if t.kind == "zero":
        return np.zeros_like(Z)
    if t.kind == "great_circle":
        return sphere.great_circle_potential_grad(Z, t.d, t.quad_nodes)
    w = np.broadcast_to(t.teacher.c / t.teacher.m, (Z.shape[0], t.teacher.m))
    return sphere.arc_kernel_grad_sum(Z, t.teacher.z, w, t.d)
