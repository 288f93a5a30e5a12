"""Spectral quadrature of the sigma functionals over the energy level.

The level {H~ = 1/2} is parametrized by (q, omega) in T^n x S^{n-1} with
p = alpha(q) + lambda(q)^{-1/2} omega, and the invariant measure is
lambda^{-n/2} d(omega) dq. Sphere rules are antipodally symmetric so odd
integrands in omega cancel node by node.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_gegenbauer

from .model import MagneticModel, blocks_from_jets
from .trigpoly import torus_grid

CONVERGENCE_TOL = 1e-8
_CHUNK = 1 << 15  # q-points x sphere nodes per batch


class GridTooCoarse(UserWarning):
    """Doubling N changed a quadrature result by more than 1e-8."""


def sphere_volume(n: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def sphere_rule(n: int, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Antipodally symmetric quadrature on S^{n-1}: (nodes (M, n), weights (M,)).

    For n = 2, ``size`` is the (even) number of equally spaced angles. For
    n >= 3 it is the polynomial degree of exactness; the rule is a product
    of Gauss-Gegenbauer nodes in the last coordinate with the rule on
    S^{n-2}.
    """
    if n < 2:
        raise ValueError("sphere rules need n >= 2")
    if size is None:
        size = default_sphere_size(n)
    if n == 2:
        M = size + (size % 2)
        phi = 2 * np.pi * np.arange(M) / M
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1), np.full(M, 2 * np.pi / M)
    m = (size + 2) // 2  # Gauss with m nodes is exact to degree 2m - 1
    t, wt = roots_gegenbauer(m, (n - 2) / 2)
    inner, win = sphere_rule(n - 1, size if n > 3 else 2 * ((size + 2) // 2))
    s = np.sqrt(1.0 - t * t)
    nodes = np.concatenate([np.concatenate([s[i] * inner, np.full((len(inner), 1), t[i])], axis=1) for i in range(m)])
    weights = np.concatenate([wt[i] * win for i in range(m)])
    return nodes, weights


def default_sphere_size(n: int) -> int:
    return {2: 64, 3: 26}.get(n, 10)


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor grid over T^n x S^{n-1} with trapezoidal weights in q."""

    n: int
    N: int
    sphere_size: int
    q: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)
    omega_weights: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n: int, N: int, sphere_size: int | None = None) -> "QuadratureGrid":
        if not 2 <= n <= 4:
            raise ValueError("quadrature supports 2 <= n <= 4")
        size = default_sphere_size(n) if sphere_size is None else sphere_size
        omega, w = sphere_rule(n, size)
        return cls(n, N, size, torus_grid(n, N), omega, w)

    @classmethod
    def for_model(cls, model: MagneticModel, N: int | None = None, sphere_size: int | None = None):
        return cls.build(model.dim, N or default_grid_size(model), sphere_size)

    @property
    def q_weight(self) -> float:
        return (2 * np.pi / self.N) ** self.n

    @property
    def size(self) -> int:
        return len(self.q) * len(self.omega)

    def params(self) -> dict:
        return {"n": self.n, "N": self.N, "sphere_size": self.sphere_size, "sphere_nodes": len(self.omega)}


def default_grid_size(model: MagneticModel) -> int:
    kmax = max([model.lam.lam.max_wavenumber] + [a.max_wavenumber for a in model.gauge.alpha])
    return 4 * kmax + 4


def level_parametrize(model: MagneticModel, q, omega, which: str = "H~") -> tuple[np.ndarray, np.ndarray]:
    """Momentum on the 1/2 level over (q, omega) and the measure weight lambda^{-n/2}.

    ``which="H"`` drops the alpha shift (level of H instead of H~).
    """
    q = np.asarray(q, dtype=float)
    omega = np.asarray(omega, dtype=float)
    lam = np.asarray(model.lam.lam(q))
    shift = model.alpha(q) if which == "H~" else 0.0
    p = shift + omega / np.sqrt(lam)[..., None]
    return p, lam ** (-q.shape[-1] / 2)


@dataclass
class SigmaResult:
    value: float
    which: str
    grid: dict
    integrand_min: float
    integrand_max: float
    refined_value: float | None = None

    @property
    def converged(self) -> bool:
        return self.refined_value is None or abs(self.refined_value - self.value) <= CONVERGENCE_TOL


def _q_chunks(grid: QuadratureGrid):
    step = max(1, _CHUNK // len(grid.omega))
    for start in range(0, len(grid.q), step):
        yield grid.q[start : start + step]


def _level_integral(model: MagneticModel, grid: QuadratureGrid, which: str, integrand):
    """sum over (q, omega) of w_q w_omega lambda^{-n/2} integrand(blocks, jets, omega).

    Per-q sphere sums are collected in order and reduced with numpy's
    pairwise summation, so the result depends only on model and grid.
    """
    n = model.dim
    per_q, lo, hi = [], np.inf, -np.inf
    for qc in _q_chunks(grid):
        lam, glam, hlam = model.lam_jet(qc)
        al, Da, D2a = model.alpha_jet(qc) if which == "H~" else (np.zeros_like(qc), None, None)
        p = (al[:, None, :] if which == "H~" else 0.0) + grid.omega[None, :, :] / np.sqrt(lam)[:, None, None]
        jets = (lam[:, None], glam[:, None, :], hlam[:, None, :, :])
        if which == "H~":
            jets += (al[:, None, :], Da[:, None, :, :], D2a[:, None, :, :, :])
        else:
            jets += (None, None, None)
        values = integrand(blocks_from_jets(jets, p, which), jets, grid.omega)
        lo, hi = min(lo, float(values.min())), max(hi, float(values.max()))
        per_q.append((values @ grid.omega_weights) * lam ** (-n / 2))
    total = float(np.sum(np.concatenate(per_q))) * grid.q_weight
    return total, lo, hi


def _trace_integrand(blocks, jets, omega):
    # Hpp depends on q only: invert once per q-point, not per sphere node
    Hpp = blocks.Hpp
    if Hpp.shape[-3] != 1:
        Hpp = Hpp[..., :1, :, :]
    inv = np.linalg.inv(Hpp)
    correction = np.einsum("...ij,...jk,...ki->...", blocks.Hqp, inv, blocks.Hpq, optimize=True)
    return np.trace(blocks.Hqq, axis1=-2, axis2=-1) - correction


def sigma_direct(model: MagneticModel, which: str = "H", grid: QuadratureGrid | None = None,
                 check: bool = True) -> SigmaResult:
    """Level average of tr(Hqq - Hqp Hpp^{-1} Hpq) against the invariant measure.

    With ``check`` the value is recomputed on the 2N grid and a
    :class:`GridTooCoarse` warning is issued if the two differ by more
    than 1e-8.
    """
    grid = grid or QuadratureGrid.for_model(model)
    value, lo, hi = _level_integral(model, grid, which, _trace_integrand)
    refined = None
    if check:
        fine = QuadratureGrid.build(grid.n, 2 * grid.N, grid.sphere_size)
        refined = _level_integral(model, fine, which, _trace_integrand)[0]
        if abs(refined - value) > CONVERGENCE_TOL:
            warnings.warn(
                f"sigma({which}) changed by {abs(refined - value):.3e} from N={grid.N} to N={2 * grid.N}",
                GridTooCoarse,
                stacklevel=2,
            )
    return SigmaResult(value, which, grid.params(), lo, hi, refined)


def sigma_closed_form(model: MagneticModel, N: int | None = None) -> float:
    """Vol(S^{n-1}) (n - 2)/4 * integral of lambda^{-2-n/2} |grad lambda|^2 dq."""
    n = model.dim
    if model.lam.lam.is_constant or n == 2:
        return 0.0
    N = N or default_grid_size(model)
    q = torus_grid(n, N)
    lam, glam = model.lam_jet(q, order=1)
    integrand = lam ** (-2 - n / 2) * np.einsum("...i,...i->...", glam, glam)
    return sphere_volume(n) * (n - 2) / 4 * float(np.sum(integrand)) * (2 * np.pi / N) ** n


def sigma_half_gradient_form(model: MagneticModel, N: int | None = None) -> float:
    """Vol(S^{n-1}) * integral of (lap lambda / 2 lambda - |grad lambda|^2 / 2 lambda^2) lambda^{-n/2} dq.

    The variant trace integrand with coefficient 1/(2 lambda^2) on the
    gradient term. It does not match direct differentiation of H (which
    gives 1/lambda^2); it is reported for comparison only.
    """
    n = model.dim
    N = N or default_grid_size(model)
    q = torus_grid(n, N)
    lam, glam, hlam = model.lam_jet(q)
    lap = np.trace(hlam, axis1=-2, axis2=-1)
    g2 = np.einsum("...i,...i->...", glam, glam)
    integrand = (lap / (2 * lam) - g2 / (2 * lam ** 2)) * lam ** (-n / 2)
    return sphere_volume(n) * float(np.sum(integrand)) * (2 * np.pi / N) ** n


def gauge_invariance_check(model: MagneticModel, grid: QuadratureGrid | None = None) -> float:
    """|sigma(H~) - sigma(H)| on a common grid."""
    grid = grid or QuadratureGrid.for_model(model)
    a = sigma_direct(model, "H~", grid, check=False).value
    b = sigma_direct(model, "H", grid, check=False).value
    return abs(a - b)


def odd_integrand_check(model: MagneticModel, grid: QuadratureGrid | None = None, absolute: bool = False) -> float:
    """Integral over {H = 1/2} of sum_{k,i} H_{p_k} d^2 alpha_k / dq_i^2 d(mu).

    Vanishes because the integrand is odd in p and the sphere rule is
    antipodal. ``absolute=True`` replaces H_{p_k} by |H_{p_k}|, a control
    that must be nonzero for nonzero alpha.
    """
    grid = grid or QuadratureGrid.for_model(model)
    n = model.dim
    per_q = []
    for qc in _q_chunks(grid):
        lam = np.asarray(model.lam.lam(qc))
        _, _, D2a = model.alpha_jet(qc)
        lap_alpha = np.trace(D2a, axis1=-2, axis2=-1)  # (Q, n)
        # H_p = lambda p with p = lambda^{-1/2} omega on the level
        Hp = np.sqrt(lam)[:, None, None] * grid.omega[None, :, :]
        if absolute:
            Hp = np.abs(Hp)
        values = np.einsum("qmk,qk->qm", Hp, lap_alpha)
        per_q.append((values @ grid.omega_weights) * lam ** (-n / 2))
    return float(np.sum(np.concatenate(per_q))) * grid.q_weight


def total_mass(model: MagneticModel, grid: QuadratureGrid | None = None) -> float:
    """Sum of the invariant-measure weights over the level grid."""
    grid = grid or QuadratureGrid.for_model(model)
    per_q = []
    for qc in _q_chunks(grid):
        _, weight = level_parametrize(model, qc[:, None, :], grid.omega[None, :, :])
        per_q.append(np.broadcast_to(weight, (len(qc), len(grid.omega))) @ grid.omega_weights)
    return float(np.sum(np.concatenate(per_q))) * grid.q_weight


def total_mass_fourier(model: MagneticModel, N: int | None = None) -> float:
    """Vol(S^{n-1}) times (2 pi)^n times the mean of lambda^{-n/2}.

    The mean is the zero Fourier coefficient of lambda^{-n/2}, taken by FFT
    of its grid samples.
    """
    n = model.dim
    N = N or 4 * default_grid_size(model)
    samples = np.asarray(model.lam.lam(torus_grid(n, N))).reshape((N,) * n) ** (-n / 2)
    mean = np.fft.fftn(samples).flat[0].real / samples.size
    return sphere_volume(n) * (2 * np.pi) ** n * mean


def sigma_report(model: MagneticModel, grid: QuadratureGrid, model_hash: str,
                 refinements: int = 2) -> dict:
    """Structured results document for one model and grid."""
    sH = sigma_direct(model, "H", grid, check=False)
    sHt = sigma_direct(model, "H~", grid, check=False)
    closed = sigma_closed_form(model, grid.N)
    table = []
    for r in range(refinements + 1):
        g = grid if r == 0 else QuadratureGrid.build(grid.n, grid.N * 2 ** r, grid.sphere_size)
        table.append({"N": g.N, "sigma_H": sigma_direct(model, "H", g, check=False).value,
                      "closed_form": sigma_closed_form(model, g.N)})
    rel = abs(sH.value - closed) / abs(closed) if closed else abs(sH.value - closed)
    return {
        "model_hash": model_hash,
        "grid": grid.params(),
        "sigma_H": sH.value,
        "sigma_H_tilde": sHt.value,
        "closed_form": closed,
        "half_gradient_form": sigma_half_gradient_form(model, grid.N),
        "discrepancy_gauge": abs(sHt.value - sH.value),
        "discrepancy_closed_form": rel,
        "odd_integrand": odd_integrand_check(model, grid),
        "integrand_range_H": [sH.integrand_min, sH.integrand_max],
        "convergence": table,
        "converged": abs(table[1]["sigma_H"] - table[0]["sigma_H"]) <= CONVERGENCE_TOL if len(table) > 1 else None,
    }
