"""Model data on the torus: the conformal factor and the magnetic field with its gauge.

The metric is ds^2 = (1 / 2 lambda) |dq|^2, so the kinetic Hamiltonian is
H(p, q) = lambda(q) |p|^2 / 2. A closed 2-form beta splits as
beta = d(alpha) + gamma with gamma constant; in the gauged picture the
Hamiltonian is H~(p, q) = H(p - alpha(q), q).

Index conventions used throughout:

* ``beta_ij`` is the coefficient of dq_i ^ dq_j (i < j), extended skew, so
  ``beta_matrix(q)[i, j] = beta_ij`` and ``beta_matrix(q)[j, i] = -beta_ij``.
* ``Dalpha[k, j] = d alpha_k / d q_j``.
* ``Hpq[i, j] = d^2 H / d p_i d q_j`` and ``Hqp = Hpq.T``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelError, NotClosed
from .trigpoly import FieldStack, TrigPoly, torus_grid

CLOSED_TOL = 1e-10


def _pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _abs_coeff_sum(f: TrigPoly) -> float:
    return float(np.abs(f.a).sum() + np.abs(f.b).sum())


# ---------------------------------------------------------------------------
# conformal factor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConformalFactor:
    """Conformal factor lambda with a certified positive lower bound."""

    lam: TrigPoly
    lower_bound: float

    @classmethod
    def certify(cls, lam: TrigPoly, max_refinements: int = 3) -> "ConformalFactor":
        """Certify min lambda > 0 by sampling plus a Lipschitz margin.

        Samples at four times the Nyquist resolution. Between samples
        lambda can drop at most ``(h sqrt(n) / 2) * sum |k| (|a_k| + |b_k|)``;
        that margin plus 10x round-off is subtracted from the sample minimum.
        """
        n = lam.dim
        if lam.is_constant:
            value = lam.mean()
            bound = value - 10 * np.finfo(float).eps * max(abs(value), 1.0)
            if bound <= 0:
                raise ModelError(f"conformal factor must be positive, got constant {value}")
            return cls(lam, float(bound))
        kmax = lam.max_wavenumber
        lipschitz = float(np.sum(np.linalg.norm(lam.k, axis=1) * (np.abs(lam.a) + np.abs(lam.b))))
        roundoff = 10 * np.finfo(float).eps * _abs_coeff_sum(lam)
        N = 4 * (2 * kmax + 1)
        for _ in range(max_refinements + 1):
            sample_min = float(np.min(lam(torus_grid(n, N))))
            h = 2 * np.pi / N
            bound = sample_min - 0.5 * h * math.sqrt(n) * lipschitz - roundoff
            if bound > 0:
                return cls(lam, bound)
            if sample_min <= 0 or N ** n > 4_000_000:
                break
            N *= 2
        raise ModelError(
            f"conformal factor is not certified positive: certified lower bound {bound:.3e} <= 0"
        )

    @property
    def dim(self) -> int:
        return self.lam.dim


# ---------------------------------------------------------------------------
# forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoForm:
    """Closed-or-not 2-form with trig-polynomial components beta_ij, i < j."""

    dim: int
    components: Mapping[tuple[int, int], TrigPoly] = field(default_factory=dict)

    def __post_init__(self):
        comps = {}
        for (i, j), f in dict(self.components).items():
            if not (0 <= i < self.dim and 0 <= j < self.dim) or i == j:
                raise ModelError(f"invalid 2-form index ({i}, {j}) for dim {self.dim}")
            if i > j:
                i, j, f = j, i, -f
            comps[(i, j)] = comps[(i, j)] + f if (i, j) in comps else f
        object.__setattr__(self, "components", {p: comps.get(p, TrigPoly.zero(self.dim)) for p in _pairs(self.dim)})

    @classmethod
    def zero(cls, dim: int) -> "TwoForm":
        return cls(dim, {})

    @classmethod
    def constant(cls, matrix) -> "TwoForm":
        m = np.asarray(matrix, dtype=float)
        n = m.shape[0]
        return cls(n, {(i, j): TrigPoly.constant(n, m[i, j]) for i, j in _pairs(n)})

    def __getitem__(self, ij: tuple[int, int]) -> TrigPoly:
        i, j = ij
        return self.components[(i, j)] if i < j else -self.components[(j, i)]

    def __add__(self, other: "TwoForm") -> "TwoForm":
        return TwoForm(self.dim, {p: self.components[p] + other.components[p] for p in _pairs(self.dim)})

    def __eq__(self, other) -> bool:
        if not isinstance(other, TwoForm):
            return NotImplemented
        return self.dim == other.dim and all(self.components[p] == other.components[p] for p in _pairs(self.dim))

    __hash__ = None  # type: ignore[assignment]

    @property
    def is_zero(self) -> bool:
        return all(f.is_zero for f in self.components.values())

    @property
    def max_wavenumber(self) -> int:
        return max((f.max_wavenumber for f in self.components.values()), default=0)

    def mean_matrix(self) -> np.ndarray:
        n = self.dim
        m = np.zeros((n, n))
        for (i, j), f in self.components.items():
            m[i, j] = f.mean()
            m[j, i] = -m[i, j]
        return m

    def stack(self) -> FieldStack:
        return FieldStack([self.components[p] for p in _pairs(self.dim)], self.dim)


def assemble_skew(values: np.ndarray, n: int) -> np.ndarray:
    """Turn stacked (..., n(n-1)/2) pair values into skew (..., n, n) matrices."""
    out = np.zeros(values.shape[:-1] + (n, n))
    for c, (i, j) in enumerate(_pairs(n)):
        out[..., i, j] = values[..., c]
        out[..., j, i] = -values[..., c]
    return out


def exterior_derivative(alpha: Sequence[TrigPoly]) -> TwoForm:
    """d(sum alpha_i dq_i) with components d_i alpha_j - d_j alpha_i."""
    n = len(alpha)
    return TwoForm(n, {(i, j): alpha[j].derivative(i) - alpha[i].derivative(j) for i, j in _pairs(n)})


def _default_grid_size(max_wavenumber: int) -> int:
    return max(2 * max_wavenumber + 1, 4)


def check_closed(beta: TwoForm, grid_size: int | None = None) -> float:
    """Max over a uniform grid of |(d beta)_ijk|, i < j < k.

    ``grid_size`` must resolve the highest wavenumber (>= 2 kmax + 1); it
    defaults to the smallest such size.
    """
    n = beta.dim
    if n < 3:
        return 0.0
    kmax = beta.max_wavenumber
    N = grid_size or _default_grid_size(kmax)
    if N < 2 * kmax + 1:
        raise ValueError(f"grid_size {N} does not resolve max wavenumber {kmax}")
    q = torus_grid(n, N)
    worst = 0.0
    for i, j, k in itertools.combinations(range(n), 3):
        d = beta[(j, k)].grad(q)[:, i] - beta[(i, k)].grad(q)[:, j] + beta[(i, j)].grad(q)[:, k]
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


# ---------------------------------------------------------------------------
# gauge decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaugeData:
    """Primitive alpha and constant harmonic part Gamma with beta = d(alpha) + gamma.

    ``Gamma[i, j]`` is the coefficient of dq_i ^ dq_j in gamma (skew).
    """

    alpha: tuple[TrigPoly, ...]
    Gamma: np.ndarray

    def __post_init__(self):
        G = np.array(self.Gamma, dtype=float)
        if G.shape != (len(self.alpha), len(self.alpha)) or not np.array_equal(G, -G.T):
            raise ModelError("Gamma must be a skew-symmetric n x n matrix")
        G.setflags(write=False)
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "alpha", tuple(self.alpha))

    @property
    def dim(self) -> int:
        return len(self.alpha)

    @property
    def alpha_is_zero(self) -> bool:
        return all(a.is_zero for a in self.alpha)

    def two_form(self) -> TwoForm:
        return exterior_derivative(self.alpha) + TwoForm.constant(self.Gamma)


def decompose(beta: TwoForm, tol: float = CLOSED_TOL) -> GaugeData:
    """Split a closed 2-form into d(alpha) + gamma.

    Gamma is the mean (k = 0 mode) of beta. For every k != 0 the primitive
    is the divergence-free solution

        alpha_j = sum_l k_l (a_lj sin(k.q) - b_lj cos(k.q)) / |k|^2,

    which satisfies d(alpha) = beta - gamma mode by mode when beta is closed.
    """
    residual = check_closed(beta)
    if residual > tol:
        raise NotClosed(residual, tol)
    n = beta.dim
    modes: list[list] = [[] for _ in range(n)]
    for l in range(n):
        for j in range(n):
            if l == j:
                continue
            f = beta[(l, j)]
            for kk, a, b in zip(f.k, f.a, f.b):
                if not np.any(kk):
                    continue
                k2 = float(np.dot(kk, kk))
                c = kk[l] / k2
                modes[j].append((kk, -c * b, c * a))
    alpha = tuple(TrigPoly.from_modes(n, m) for m in modes)
    return GaugeData(alpha, beta.mean_matrix())


def gauge_residual(beta: TwoForm, gauge: GaugeData, grid_size: int | None = None) -> float:
    """Max grid residual of |d(alpha) + gamma - beta| over all components."""
    n = beta.dim
    rebuilt = gauge.two_form()
    kmax = max(beta.max_wavenumber, rebuilt.max_wavenumber)
    q = torus_grid(n, grid_size or _default_grid_size(kmax))
    worst = 0.0
    for p in _pairs(n):
        worst = max(worst, float(np.max(np.abs(rebuilt.components[p](q) - beta.components[p](q)), initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MagneticModel:
    """Conformal factor plus magnetic field, with gauge data derived from the field."""

    lam: ConformalFactor
    beta: TwoForm
    gauge: GaugeData

    def __post_init__(self):
        n = self.lam.dim
        if self.beta.dim != n or self.gauge.dim != n:
            raise ModelError("lambda, beta and the gauge data disagree on the dimension")
        if n < 2:
            raise ModelError("torus dimension must be at least 2")
        object.__setattr__(self, "_lam_stack", FieldStack([self.lam.lam], n))
        object.__setattr__(self, "_alpha_stack", FieldStack(list(self.gauge.alpha), n))
        object.__setattr__(self, "_beta_stack", self.beta.stack())

    @classmethod
    def build(cls, lam: TrigPoly, beta: TwoForm | None = None, alpha: Sequence[TrigPoly] | None = None,
              tol: float = CLOSED_TOL) -> "MagneticModel":
        """Certify lambda and derive gauge data for beta.

        When an explicit ``alpha`` is supplied it is checked against beta
        (Gamma is still the mean of beta) instead of solving for it.
        """
        n = lam.dim
        beta = beta if beta is not None else TwoForm.zero(n)
        factor = ConformalFactor.certify(lam)
        if alpha is None:
            gauge = decompose(beta, tol)
        else:
            residual = check_closed(beta)
            if residual > tol:
                raise NotClosed(residual, tol)
            gauge = GaugeData(tuple(alpha), beta.mean_matrix())
            mismatch = gauge_residual(beta, gauge)
            if mismatch > tol:
                raise ModelError(f"explicit alpha does not reproduce beta: residual {mismatch:.3e}")
        return cls(factor, beta, gauge)

    @property
    def dim(self) -> int:
        return self.lam.dim

    @property
    def Gamma(self) -> np.ndarray:
        return self.gauge.Gamma

    # -- local field data -----------------------------------------------
    def lam_jet(self, q, order: int = 2):
        """lambda, grad lambda, Hess lambda at q (Hessian only for order 2)."""
        out = self._lam_stack.jet(q, order)
        lam, glam = out[0][..., 0], out[1][..., 0, :]
        return (lam, glam, out[2][..., 0, :, :]) if order >= 2 else (lam, glam)

    def alpha_jet(self, q, order: int = 2):
        """alpha (..., n), Dalpha (..., n, n) and D2alpha (..., n, n, n)."""
        return self._alpha_stack.jet(q, order)

    def alpha(self, q) -> np.ndarray:
        return self._alpha_stack.values(q)

    def beta_matrix(self, q) -> np.ndarray:
        return assemble_skew(self._beta_stack.values(q), self.dim)


def constant_field_model(n: int, B: float, lam: float = 1.0) -> MagneticModel:
    """Flat model lambda = const with beta = B dq_1 ^ dq_2."""
    beta = TwoForm(n, {(0, 1): TrigPoly.constant(n, B)}) if B else TwoForm.zero(n)
    return MagneticModel.build(TrigPoly.constant(n, lam), beta)


# ---------------------------------------------------------------------------
# Hamiltonian derivative blocks
# ---------------------------------------------------------------------------


@dataclass
class Blocks:
    """Hamiltonian value with its first- and second-derivative blocks."""

    value: np.ndarray
    Hp: np.ndarray
    Hq: np.ndarray
    Hpp: np.ndarray
    Hpq: np.ndarray
    Hqp: np.ndarray
    Hqq: np.ndarray


def _kinetic_blocks(lam, glam, hlam, v) -> Blocks:
    n = v.shape[-1]
    v2 = np.einsum("...i,...i->...", v, v)
    eye = np.eye(n)
    Hpq = v[..., :, None] * glam[..., None, :]
    return Blocks(
        value=0.5 * lam * v2,
        Hp=lam[..., None] * v,
        Hq=0.5 * v2[..., None] * glam,
        Hpp=lam[..., None, None] * eye,
        Hpq=Hpq,
        Hqp=np.swapaxes(Hpq, -1, -2),
        Hqq=0.5 * v2[..., None, None] * hlam,
    )


def hamiltonian_blocks(model: MagneticModel, q, p, which: str = "H") -> Blocks:
    """Analytic derivatives of H (``which="H"``) or H~ (``which="H~"``).

    For H~ the chain rule through v = p - alpha(q) gives

        H~pp = Hpp,   H~pq = -Hpp Dalpha + Hpq,
        H~qq = Dalpha^T Hpp Dalpha - Hqp Dalpha - Dalpha^T Hpq + Hqq - M,

    with H blocks evaluated at (v, q) and M_ij = sum_k H_{p_k} d_i d_j alpha_k.
    """
    if which not in ("H", "H~"):
        raise ValueError(f"unknown Hamiltonian {which!r}")
    q = np.asarray(q, dtype=float)
    jets = model.lam_jet(q) + (model.alpha_jet(q) if which == "H~" else (None, None, None))
    return blocks_from_jets(jets, np.asarray(p, dtype=float), which)


def blocks_from_jets(jets, p: np.ndarray, which: str = "H") -> Blocks:
    """Blocks from precomputed field jets ``(lam, glam, hlam, alpha, Dalpha, D2alpha)``.

    Jets broadcast against ``p``, so one set of q-jets of shape (Q, 1, ...)
    serves a (Q, M, n) batch of momenta.
    """
    lam, glam, hlam, al, Da, D2a = jets
    lam = np.asarray(lam)
    if which == "H":
        return _kinetic_blocks(lam, glam, hlam, p)
    v = p - al
    b = _kinetic_blocks(lam, glam, hlam, v)
    DaT = np.swapaxes(Da, -1, -2)
    M = np.einsum("...k,...kij->...ij", b.Hp, D2a)
    Hpq = -b.Hpp @ Da + b.Hpq
    Hqq = DaT @ b.Hpp @ Da - b.Hqp @ Da - DaT @ b.Hpq + b.Hqq - M
    return Blocks(
        value=b.value,
        Hp=b.Hp,
        Hq=-np.einsum("...kj,...k->...j", Da, b.Hp) + b.Hq,
        Hpp=b.Hpp,
        Hpq=Hpq,
        Hqp=np.swapaxes(Hpq, -1, -2),
        Hqq=Hqq,
    )


def point_blocks_tilde(model: MagneticModel, q: np.ndarray, p: np.ndarray):
    """Single-point H~ data for the integrators: (lam, Hp, Hq, Hpq, Hqq).

    Same formulas as :func:`hamiltonian_blocks` with H~pp = lam * I left
    implicit; avoids the batched einsum machinery.
    """
    lam_s = model._lam_stack
    al_s = model._alpha_stack
    if lam_s.empty:
        lam, glam, hlam = 0.0, np.zeros_like(q), None
    else:
        theta = lam_s.k @ q
        cs, sn = np.cos(theta), np.sin(theta)
        lam = float(cs @ lam_s.A[:, 0] + sn @ lam_s.B[:, 0])
        glam = (cs * lam_s.B[:, 0] - sn * lam_s.A[:, 0]) @ lam_s.k
        hlam = -(lam_s.k.T * (cs * lam_s.A[:, 0] + sn * lam_s.B[:, 0])) @ lam_s.k
    if al_s.empty:
        v = p
        Hp = lam * v
        v2 = float(v @ v)
        Hpq = np.outer(v, glam)
        Hqq = 0.5 * v2 * hlam if hlam is not None else np.zeros((q.size, q.size))
        return lam, Hp, 0.5 * v2 * glam, Hpq, Hqq
    al, Da, D2a = al_s.jet(q)
    v = p - al
    v2 = float(v @ v)
    Hp = lam * v
    Hpq0 = np.outer(v, glam)
    M = np.einsum("k,kij->ij", Hp, D2a)
    Hpq = -lam * Da + Hpq0
    Hqq = lam * (Da.T @ Da) - Hpq0.T @ Da - Da.T @ Hpq0 - M
    if hlam is not None:
        Hqq += 0.5 * v2 * hlam
    return lam, Hp, 0.5 * v2 * glam - Da.T @ Hp, Hpq, Hqq


def hamiltonian(model: MagneticModel, q, p, which: str = "H"):
    """Value of H or H~ only."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    lam = model._lam_stack.values(q)[..., 0]
    if which != "H":
        p = p - model.alpha(q)
    out = 0.5 * lam * np.einsum("...i,...i->...", p, p)
    return float(out) if out.ndim == 0 else out
