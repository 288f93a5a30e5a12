"""Seeded low-discrepancy initial conditions on the energy level."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from ..dynamics import PhasePoint
from ..model import MagneticModel


def halton_torus_sphere(n: int, K: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """K points of T^n x S^{n-1} from a scrambled Halton sequence.

    The first n coordinates become angles; the remaining n go through the
    normal quantile function and are normalized, which maps uniform cube
    points to uniform directions.
    """
    u = qmc.Halton(d=2 * n, scramble=True, seed=np.random.default_rng(seed)).random(K)
    q = 2.0 * np.pi * u[:, :n]
    g = ndtri(np.clip(u[:, n:], 1e-12, 1 - 1e-12))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return q, dirs


def level_point(model: MagneticModel, q, direction) -> PhasePoint:
    """Gauged phase point over q with kinetic direction ``direction`` on {H~ = 1/2}."""
    q = np.asarray(q, dtype=float)
    lam = float(model.lam.lam(q))
    return PhasePoint(q, model.alpha(q) + np.asarray(direction, float) / np.sqrt(lam))


def sample_initial_conditions(model: MagneticModel, K: int, seed: int):
    """(q0, directions, phase points) for a seeded scan."""
    q, dirs = halton_torus_sphere(model.dim, K, seed)
    return q, dirs, [level_point(model, qi, di) for qi, di in zip(q, dirs)]
