"""Real finite Fourier series on the torus R^n / (2 pi Z)^n.

A :class:`TrigPoly` stores one canonical wavevector per +-k pair,

    f(q) = sum_k a_k cos(k.q) + b_k sin(k.q),

where k is canonical when its first nonzero entry is positive (k = 0 keeps
only the cosine coefficient). All evaluators accept a single point of shape
``(n,)`` or a batch of shape ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def canonical_wavevector(k: Sequence[int]) -> tuple[tuple[int, ...], int]:
    """Return ``(k_canonical, sign)`` with ``k = sign * k_canonical``."""
    k = tuple(int(x) for x in k)
    for x in k:
        if x != 0:
            return (k, 1) if x > 0 else (tuple(-y for y in k), -1)
    return k, 1


@dataclass(frozen=True, eq=False)
class TrigPoly:
    """Finite real Fourier series in ``dim`` variables.

    Use :meth:`from_modes` to build one; it merges duplicate and opposite
    wavevectors into canonical form.
    """

    dim: int
    k: np.ndarray  # (m, n) int
    a: np.ndarray  # (m,) cosine coefficients
    b: np.ndarray  # (m,) sine coefficients

    def __post_init__(self):
        for arr in (self.k, self.a, self.b):
            arr.setflags(write=False)

    @classmethod
    def from_modes(cls, dim: int, modes: Iterable[tuple[Sequence[int], float, float]]) -> "TrigPoly":
        acc: dict[tuple[int, ...], list[float]] = {}
        for kvec, a, b in modes:
            if len(kvec) != dim:
                raise ValueError(f"wavevector {tuple(kvec)} does not have length {dim}")
            kc, sign = canonical_wavevector(kvec)
            slot = acc.setdefault(kc, [0.0, 0.0])
            slot[0] += float(a)
            slot[1] += sign * float(b)
        keys = sorted(k for k, (a, b) in acc.items() if a != 0.0 or (b != 0.0 and any(k)))
        if not keys:
            return cls.zero(dim)
        k = np.array(keys, dtype=np.int64).reshape(len(keys), dim)
        a = np.array([acc[kk][0] for kk in keys])
        b = np.array([acc[kk][1] if any(kk) else 0.0 for kk in keys])
        return cls(dim, k, a, b)

    @classmethod
    def zero(cls, dim: int) -> "TrigPoly":
        return cls(dim, np.zeros((0, dim), dtype=np.int64), np.zeros(0), np.zeros(0))

    @classmethod
    def constant(cls, dim: int, value: float) -> "TrigPoly":
        return cls.from_modes(dim, [((0,) * dim, value, 0.0)])

    # -- structure -------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.k.shape[0] == 0

    @property
    def is_constant(self) -> bool:
        return not np.any(self.k)

    @property
    def max_wavenumber(self) -> int:
        """Largest |k_i| over all modes and coordinates."""
        return int(np.abs(self.k).max()) if self.k.size else 0

    def modes(self) -> list[tuple[tuple[int, ...], float, float]]:
        return [(tuple(int(x) for x in kk), float(a), float(b)) for kk, a, b in zip(self.k, self.a, self.b)]

    def mean(self) -> float:
        """Average over the torus (the k = 0 coefficient)."""
        zero = ~np.any(self.k, axis=1)
        return float(self.a[zero].sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrigPoly):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.k, other.k)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None  # type: ignore[assignment]

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        return TrigPoly.from_modes(self.dim, self.modes() + other.modes())

    def __neg__(self) -> "TrigPoly":
        return TrigPoly(self.dim, self.k, -self.a, -self.b)

    def __sub__(self, other: "TrigPoly") -> "TrigPoly":
        return self + (-other)

    def scale(self, c: float) -> "TrigPoly":
        return TrigPoly(self.dim, self.k, c * self.a, c * self.b)

    def derivative(self, i: int) -> "TrigPoly":
        """Exact partial derivative with respect to q_i."""
        ki = self.k[:, i].astype(float)
        # d/dq (a cos + b sin) = k_i (b cos - a sin)
        return TrigPoly.from_modes(self.dim, zip(self.k, ki * self.b, -ki * self.a))

    # -- evaluation ------------------------------------------------------
    def _phases(self, q):
        q = np.asarray(q, dtype=float)
        theta = q @ self.k.T.astype(float)
        return np.cos(theta), np.sin(theta)

    def __call__(self, q) -> np.ndarray | float:
        q = np.asarray(q, dtype=float)
        if self.is_zero:
            return np.zeros(q.shape[:-1]) if q.ndim > 1 else 0.0
        c, s = self._phases(q)
        out = c @ self.a + s @ self.b
        return out if q.ndim > 1 else float(out)

    def grad(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.is_zero:
            return np.zeros(q.shape)
        c, s = self._phases(q)
        return (c * self.b - s * self.a) @ self.k.astype(float)

    def hessian(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        n = self.dim
        if self.is_zero:
            return np.zeros(q.shape + (n,))
        c, s = self._phases(q)
        kf = self.k.astype(float)
        w = c * self.a + s * self.b
        return -np.einsum("...m,mi,mj->...ij", w, kf, kf)

    def laplacian(self, q) -> np.ndarray | float:
        q = np.asarray(q, dtype=float)
        if self.is_zero:
            return np.zeros(q.shape[:-1]) if q.ndim > 1 else 0.0
        c, s = self._phases(q)
        k2 = (self.k.astype(float) ** 2).sum(axis=1)
        out = -((c * self.a + s * self.b) @ k2)
        return out if q.ndim > 1 else float(out)

    def jet(self, q):
        """Value, gradient and Hessian in one pass over the modes."""
        q = np.asarray(q, dtype=float)
        n = self.dim
        if self.is_zero:
            return np.zeros(q.shape[:-1]), np.zeros(q.shape), np.zeros(q.shape + (n,))
        c, s = self._phases(q)
        kf = self.k.astype(float)
        w = c * self.a + s * self.b
        g = (c * self.b - s * self.a) @ kf
        h = -np.einsum("...m,mi,mj->...ij", w, kf, kf)
        return w.sum(axis=-1), g, h


def torus_grid(n: int, N: int) -> np.ndarray:
    """Uniform tensor grid of N^n points on [0, 2 pi)^n, shape (N^n, n)."""
    axis = 2.0 * np.pi * np.arange(N) / N
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


class FieldStack:
    """Several TrigPolys on a shared wavevector set, evaluated together.

    Hot paths (vector fields, quadrature) call :meth:`jet` once per point
    instead of looping over components.
    """

    def __init__(self, polys: Sequence[TrigPoly], dim: int):
        self.dim = dim
        self.count = len(polys)
        keys = sorted({tuple(int(x) for x in kk) for p in polys for kk in p.k})
        index = {kk: m for m, kk in enumerate(keys)}
        self.k = np.array(keys, dtype=float).reshape(len(keys), dim)
        self.A = np.zeros((len(keys), self.count))
        self.B = np.zeros((len(keys), self.count))
        for c, p in enumerate(polys):
            for kk, a, b in zip(p.k, p.a, p.b):
                m = index[tuple(int(x) for x in kk)]
                self.A[m, c] = a
                self.B[m, c] = b
        self.empty = len(keys) == 0

    def values(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.empty:
            return np.zeros(q.shape[:-1] + (self.count,))
        theta = q @ self.k.T
        return np.cos(theta) @ self.A + np.sin(theta) @ self.B

    def jet(self, q, order: int = 2):
        """Values (..., c), gradients (..., c, n) and, for order 2, Hessians (..., c, n, n)."""
        q = np.asarray(q, dtype=float)
        c, n = self.count, self.dim
        if self.empty:
            z = [np.zeros(q.shape[:-1] + (c,)), np.zeros(q.shape[:-1] + (c, n))]
            if order >= 2:
                z.append(np.zeros(q.shape[:-1] + (c, n, n)))
            return tuple(z)
        theta = q @ self.k.T
        cs, sn = np.cos(theta), np.sin(theta)
        val = cs @ self.A + sn @ self.B
        # per-mode derivative weights
        dw = cs[..., :, None] * self.B - sn[..., :, None] * self.A  # (..., m, c)
        grad = np.einsum("...mc,mi->...ci", dw, self.k)
        if order < 2:
            return val, grad
        w = cs[..., :, None] * self.A + sn[..., :, None] * self.B
        hess = -np.einsum("...mc,mi,mj->...cij", w, self.k, self.k)
        return val, grad, hess
