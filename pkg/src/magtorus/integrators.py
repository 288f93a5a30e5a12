"""Time steppers: adaptive Dormand-Prince 5(4) and fixed-step implicit midpoint.

The adaptive solver keeps every accepted step with its stage derivatives so
the solution can be evaluated anywhere through the 4th-order continuous
extension. Callers that need to stop early (blow-up detection) pass a
``stop`` callback that sees each accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import StepSizeCollapse

# Butcher tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th minus 4th order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(t0 + x h) = y0 + h K^T P [x, x^2, x^3, x^4]
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@dataclass
class Step:
    """One accepted step with everything needed for dense output."""

    t0: float
    h: float
    y0: np.ndarray
    y1: np.ndarray
    Q: np.ndarray  # (dim, 4) interpolation coefficients

    @property
    def t1(self) -> float:
        return self.t0 + self.h

    def __call__(self, t: float) -> np.ndarray:
        x = (t - self.t0) / self.h
        return self.y0 + self.h * (self.Q @ np.array([x, x * x, x ** 3, x ** 4]))


@dataclass
class Solution:
    """Accepted steps of an adaptive run plus controller statistics."""

    steps: list[Step] = field(default_factory=list)
    n_rejected: int = 0
    n_evals: int = 0
    stopped: bool = False  # True when the stop callback ended the run early

    @property
    def t_end(self) -> float:
        return self.steps[-1].t1 if self.steps else float("nan")

    @property
    def step_ends(self) -> np.ndarray:
        return np.array([self.steps[0].t0] + [s.t1 for s in self.steps]) if self.steps else np.zeros(0)

    def states_at_step_ends(self) -> np.ndarray:
        return np.array([self.steps[0].y0] + [s.y1 for s in self.steps])

    def locate(self, t: float) -> Step:
        ends = self._ends()
        idx = int(np.searchsorted(ends, t, side="left"))
        return self.steps[min(max(idx, 0), len(self.steps) - 1)]

    def _ends(self) -> np.ndarray:
        cached = getattr(self, "_ends_cache", None)
        if cached is None or len(cached) != len(self.steps):
            cached = np.array([s.t1 for s in self.steps])
            self._ends_cache = cached
        return cached

    def __call__(self, t: float) -> np.ndarray:
        return self.locate(t)(t)

    def sample(self, times) -> np.ndarray:
        return np.array([self(t) for t in times])


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def initial_step(f, t0, y0, f0, direction_span, rtol, atol) -> float:
    """Starting step estimate (Hairer, Norsett & Wanner, II.4)."""
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, direction_span)


def dopri54(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0,
    t_end: float,
    rtol: float,
    atol: float,
    h_min: float | None = None,
    h_max: float = np.inf,
    stop: Callable[[Step], bool] | None = None,
    max_steps: int = 10_000_000,
) -> Solution:
    """Integrate y' = f(t, y) forward from t0 to t_end with error control.

    Raises :class:`StepSizeCollapse` if the controller needs a step below
    ``h_min`` (default ``1e-12 * max(1, t_end - t0)``).
    """
    y = np.array(y0, dtype=float)
    span = float(t_end - t0)
    if span <= 0:
        raise ValueError("t_end must exceed t0")
    if h_min is None:
        h_min = 1e-12 * max(1.0, span)
    sol = Solution()
    t = float(t0)
    k = np.empty((7, y.size))
    k[0] = f(t, y)
    sol.n_evals += 1
    h = min(initial_step(f, t, y, k[0], span, rtol, atol), h_max)
    sol.n_evals += 1
    while t < t_end:
        if len(sol.steps) >= max_steps:
            raise RuntimeError("maximum number of steps exceeded")
        last = False
        if t + h >= t_end or t + 1.01 * h >= t_end:
            h = t_end - t
            last = True
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(1, 7):
                k[s] = f(t + C[s] * h, y + h * (np.dot(A[s], k[:s])))
            y_new = y + h * (B5 @ k)
            err = _rms(h * (E @ k) / (atol + rtol * np.maximum(np.abs(y), np.abs(y_new))))
        sol.n_evals += 6
        if not np.isfinite(err):  # a stage overflowed: reject and shrink hard
            err = np.inf
        if err <= 1.0:
            step = Step(t, h, y.copy(), y_new, k.T @ P)
            sol.steps.append(step)
            t = t_end if last else t + h
            y = y_new
            k[0] = k[6]  # FSAL
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            h = min(h * factor, h_max)
            if stop is not None and stop(step):
                sol.stopped = True
                break
        else:
            sol.n_rejected += 1
            h *= MIN_FACTOR if err == np.inf else max(MIN_FACTOR, SAFETY * err ** -0.2)
            if h < h_min:
                raise StepSizeCollapse(t, h, h_min)
    return sol


def implicit_midpoint(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0,
    t_end: float,
    h: float,
    tol: float = 1e-14,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step implicit midpoint rule; returns (times, states).

    The stage equation is solved by fixed-point iteration, which converges
    for h times the Lipschitz constant below one.
    """
    n_steps = max(1, int(np.ceil((t_end - t0) / h - 1e-12)))
    h = (t_end - t0) / n_steps
    ts = t0 + h * np.arange(n_steps + 1)
    ys = np.empty((n_steps + 1, np.size(y0)))
    ys[0] = y = np.array(y0, dtype=float)
    for i in range(n_steps):
        tm = ts[i] + 0.5 * h
        y_next = y + h * f(tm, y)
        for _ in range(max_iter):
            y_new = y + h * f(tm, 0.5 * (y + y_next))
            if np.max(np.abs(y_new - y_next)) <= tol * max(1.0, np.max(np.abs(y_new))):
                y_next = y_new
                break
            y_next = y_new
        else:
            raise RuntimeError(f"implicit midpoint iteration did not converge at t={ts[i]:.6g}")
        ys[i + 1] = y = y_next
    return ts, ys
