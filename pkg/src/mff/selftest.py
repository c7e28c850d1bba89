"""Closed-form kernel quantities checked against Monte-Carlo oracles."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import sphere

SIGMA_BAND = 4.0


@dataclass
class Check:
    name: str
    closed_form: float
    oracle: float
    stderr: float
    passed: bool

    @property
    def z_score(self) -> float:
        return abs(self.closed_form - self.oracle) / self.stderr if self.stderr > 0 else float("inf")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["z_score"] = self.z_score
        return out


def _check(name, value, est, err, band=SIGMA_BAND) -> Check:
    value = float(value)
    ok = abs(value - est) <= band * err if err > 0 else abs(value - est) <= 1e-12
    return Check(name, value, float(est), float(err), bool(ok))


def _pair_at_angle(d, alpha, rng):
    u = sphere.sample_uniform_sphere(d, rng)
    w = sphere.normalize(sphere.tangent_project(u, sphere.sample_uniform_sphere(d, rng)))
    return u, np.cos(alpha) * u + np.sin(alpha) * w


def run_selftest(d: int = 16, n_samples: int = 1_000_000, seed: int = 0, band: float = SIGMA_BAND) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []

    for alpha in (0.3, np.pi / 2, 1.766, 2.9):
        u, v = _pair_at_angle(d, alpha, rng)
        est, err = sphere.mc_spherical_integral(
            lambda X: np.maximum(X @ u, 0.0) * np.maximum(X @ v, 0.0), d, n_samples, rng
        )
        checks.append(_check(f"relu_arc_kernel(alpha={alpha:.4f})", sphere.relu_arc_kernel(u, v, d), est, err, band))

    u = sphere.sample_uniform_sphere(d, rng)
    est, err = sphere.mc_spherical_integral(lambda X: np.maximum(X @ u, 0.0) ** 2, d, n_samples, rng)
    checks.append(_check("relu_selfnorm", sphere.relu_selfnorm(d), est, err, band))

    # a generic point and one tilted towards the circle plane
    for label, u in (("random", sphere.sample_uniform_sphere(d, rng)), ("tilted", sphere.normalize(np.array([0.6, 0.5, 0.3] + [0.1] * (d - 2))))):
        est, err = sphere.mc_spherical_integral(
            lambda X: np.maximum(X @ u, 0.0) * sphere.great_circle_target_value(X), d, n_samples, rng
        )
        checks.append(_check(f"great_circle_potential({label})", sphere.great_circle_potential(u, d), est, err, band))

    x = sphere.sample_uniform_sphere(d, rng)
    psi = rng.uniform(0.0, 2.0 * np.pi, size=n_samples)
    vals = np.maximum(x[0] * np.cos(psi) + x[1] * np.sin(psi), 0.0)
    checks.append(
        _check(
            "great_circle_target_value",
            sphere.great_circle_target_value(x),
            vals.mean(),
            vals.std(ddof=1) / np.sqrt(n_samples),
            band,
        )
    )
    return checks
