"""Linearized gauged flow, conjugate points, Riccati equation, Green limit.

Everything here works in the gauged picture (H~, constant Gamma). The
fiber-preserving gauge map sends vertical subspaces to vertical subspaces,
so conjugate times agree with the twisted picture.

A Lagrangian subspace dp = A dq (with respect to dp ^ dq + gamma under the
force law of :mod:`magtorus.dynamics`) satisfies

    A^T - A = L,      L = Gamma^T = -Gamma,

and along the flow A obeys the matrix Riccati equation

    A' + (A + L) H~pp A + (A + L) H~pq + H~qp A + H~qq = 0.

On Lagrangian matrices A + L = A^T, so the integrator uses the equivalent
form A' = -(A^T H~pp A + A^T H~pq + H~qp A + H~qq), whose right-hand side
is symmetric; A^T - A is then a linear invariant and is kept exactly by
the Runge-Kutta update.

``L`` is the "twist matrix" returned by :func:`lagrangian_twist`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .dynamics import LOCAL_TOL_FACTOR, PhasePoint, _field
from .errors import DetectorAmbiguous, FrameSingular, InvalidInitial, NoneFound, StepSizeCollapse
from .integrators import Solution, Step, dopri54
from .model import MagneticModel, hamiltonian_blocks, point_blocks_tilde

T_FLOOR = 1e-6
SINGULAR_REL = 1e-7  # sigma_min threshold relative to the frame scale
DIP_REL = 1e-3  # refined dips between SINGULAR_REL and this (relative) are ambiguous
BLOWUP_NORM = 1e8
BLOWUP_STEP_RATIO = 1e-4


def lagrangian_twist(model: MagneticModel) -> np.ndarray:
    """Skew matrix L with A^T - A = L for Lagrangian graphs dp = A dq."""
    return model.Gamma.T.copy()


def lagrangian_residual(model: MagneticModel, A) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(np.swapaxes(A, -1, -2) - A - lagrangian_twist(model)), initial=0.0))


# ---------------------------------------------------------------------------
# linearized field
# ---------------------------------------------------------------------------


def linearized_field(model: MagneticModel, q, p, dq, dp) -> tuple[np.ndarray, np.ndarray]:
    """Differential of the gauged vector field at (q, p) applied to (dq, dp).

    ``dq``, ``dp`` may be vectors (n,) or frames (n, k).
    """
    b = hamiltonian_blocks(model, q, p, "H~")
    G = model.Gamma
    dqdot = b.Hpq @ dq + b.Hpp @ dp
    dpdot = -b.Hqq @ dq - b.Hqp @ dp + G @ dqdot
    return dqdot, dpdot


def _frame_rhs(model: MagneticModel, reverse: bool = False):
    n = model.dim
    G = model.Gamma
    nn = n * n

    def rhs(t, y):
        q, p = y[:n], y[n : 2 * n]
        J = y[2 * n : 2 * n + nn].reshape(n, n)
        P = y[2 * n + nn :].reshape(n, n)
        lam, Hp, Hq, Hpq, Hqq = point_blocks_tilde(model, q, p)
        qdot = Hp
        pdot = -Hq + G @ qdot
        Jdot = Hpq @ J + lam * P
        Pdot = -Hqq @ J - Hpq.T @ P + G @ Jdot
        return np.concatenate([qdot, pdot, Jdot.ravel(), Pdot.ravel()])

    return rhs


def _unpack_frame(y: np.ndarray, n: int):
    nn = n * n
    return y[:n], y[n : 2 * n], y[2 * n : 2 * n + nn].reshape(n, n), y[2 * n + nn :].reshape(n, n)


# ---------------------------------------------------------------------------
# vertical frames
# ---------------------------------------------------------------------------


@dataclass
class TangentFrame:
    """Vertical frame (J, P) pushed forward along a base orbit."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    J: np.ndarray  # (k, n, n)
    P: np.ndarray  # (k, n, n)
    solution: Solution | None = field(default=None, repr=False)

    @property
    def det_J(self) -> np.ndarray:
        return np.linalg.det(self.J)

    @property
    def sigma_min(self) -> np.ndarray:
        return np.linalg.svd(self.J, compute_uv=False)[..., -1]

    def riccati_matrices(self) -> np.ndarray:
        """A = P J^{-1} at every sample (meaningless where J is singular)."""
        return np.linalg.solve(np.swapaxes(self.J, -1, -2), np.swapaxes(self.P, -1, -2)).swapaxes(-1, -2)


def _vertical_initial(x0: PhasePoint) -> np.ndarray:
    n = x0.q.size
    return np.concatenate([x0.q, x0.p, np.zeros(n * n), np.eye(n).ravel()])


def propagate_vertical(model: MagneticModel, x0: PhasePoint, T: float, tol: float = 1e-10,
                       times=None) -> TangentFrame:
    """Push the vertical subspace V(x0) forward: J(0) = 0, P(0) = I."""
    n = model.dim
    sol = dopri54(_frame_rhs(model), 0.0, _vertical_initial(x0), T,
                  rtol=LOCAL_TOL_FACTOR * tol, atol=LOCAL_TOL_FACTOR * tol)
    if times is None:
        ts, ys = sol.step_ends, sol.states_at_step_ends()
    else:
        ts = np.asarray(times, dtype=float)
        ys = sol.sample(ts)
    nn = n * n
    k = len(ts)
    return TangentFrame(ts, ys[:, :n], ys[:, n : 2 * n], ys[:, 2 * n : 2 * n + nn].reshape(k, n, n),
                        ys[:, 2 * n + nn :].reshape(k, n, n), sol)


# ---------------------------------------------------------------------------
# conjugate points
# ---------------------------------------------------------------------------


@dataclass
class ConjugateReport:
    """First conjugate time (if certified) and the detector trace."""

    t_star: float | None
    status: str  # "found" | "none" | "ambiguous"
    t_scanned: float
    times: np.ndarray
    det_J: np.ndarray
    sigma_min: np.ndarray
    method: str = ""  # "sign-change" | "sigma-min"
    dip_time: float | None = None
    dip_sigma: float | None = None

    def trace_csv(self) -> str:
        lines = ["t,detJ,sigma_min"]
        lines += [f"{t:.17g},{d:.17g},{s:.17g}" for t, d, s in zip(self.times, self.det_J, self.sigma_min)]
        return "\n".join(lines) + "\n"


class _Detector:
    """Incremental scan of det J and sigma_min(J) over accepted steps."""

    def __init__(self, n: int, t_floor: float, tol: float, samples_per_step: int = 3):
        self.n = n
        self.t_floor = t_floor
        self.tol = tol
        self.sub = samples_per_step
        self.steps: list[Step] = []
        self.t: list[float] = []
        self.det: list[float] = []
        self.smin: list[float] = []
        self.step_of: list[int] = []
        self.scale = 0.0
        self.event: tuple | None = None

    def _J(self, t: float) -> np.ndarray:
        step = self._step_for(t)
        y = step(t)
        return y[2 * self.n : 2 * self.n + self.n * self.n].reshape(self.n, self.n)

    def _step_for(self, t: float) -> Step:
        for s in reversed(self.steps):
            if s.t0 <= t:
                return s
        return self.steps[0]

    def _record(self, t: float, J: np.ndarray, idx: int):
        sv = np.linalg.svd(J, compute_uv=False)
        self.t.append(t)
        self.det.append(float(np.linalg.det(J)))
        self.smin.append(float(sv[-1]))
        self.step_of.append(idx)
        self.scale = max(self.scale, float(sv[0]))

    def __call__(self, step: Step) -> bool:
        self.steps.append(step)
        idx = len(self.steps) - 1
        n = self.n
        if idx == 0:
            self._record(step.t0, step.y0[2 * n : 2 * n + n * n].reshape(n, n), 0)
        for frac in np.arange(1, self.sub + 1) / self.sub:
            t = step.t0 + frac * step.h
            y = step.y1 if frac == 1 else step(t)
            self._record(t, y[2 * n : 2 * n + n * n].reshape(n, n), idx)
        return self._scan(len(self.t) - self.sub)

    def _scan(self, start: int) -> bool:
        for i in range(max(start, 1), len(self.t)):
            t0, t1 = self.t[i - 1], self.t[i]
            if t1 <= self.t_floor:
                continue
            d0, d1 = self.det[i - 1], self.det[i]
            if t0 >= self.t_floor and d0 != 0 and np.sign(d0) != np.sign(d1):
                root = brentq(lambda t: np.linalg.det(self._J(t)), t0, t1, xtol=self.tol, rtol=4 * np.finfo(float).eps)
                self.event = ("found", root, "sign-change", None)
                return True
            if d1 == 0.0 and t1 >= self.t_floor:
                self.event = ("found", t1, "sign-change", None)
                return True
            # interior local minimum of sigma_min at sample i - 1
            if i >= 2 and self.t[i - 2] >= self.t_floor:
                s_prev, s_mid, s_next = self.smin[i - 2], self.smin[i - 1], self.smin[i]
                # every interior minimum is refined: with long steps the
                # nearest sample can sit far above a genuine (double) zero
                if s_mid < s_prev and s_mid < s_next:
                    if self._inspect_minimum(self.t[i - 2], self.t[i - 1], self.t[i]):
                        return True
        return False

    def _inspect_minimum(self, a: float, m: float, b: float) -> bool:
        # golden section: sigma_min has a V-shaped kink at a zero, which
        # defeats parabolic interpolation
        sig = lambda t: float(np.linalg.svd(self._J(t), compute_uv=False)[-1])
        res = minimize_scalar(sig, bracket=(a, m, b), method="golden", options={"xtol": self.tol / (4 * b)})
        t_min, s_min = float(res.x), float(res.fun)
        if s_min <= SINGULAR_REL * self.scale:
            self.event = ("found", t_min, "sigma-min", s_min)
        elif s_min <= DIP_REL * self.scale:
            self.event = ("ambiguous", t_min, "sigma-min", s_min)
        else:
            return False  # an ordinary minimum, J stays well away from singular
        return True


def first_conjugate_time(model: MagneticModel, x0: PhasePoint, t_max: float, tol: float = 1e-9,
                         int_tol: float = 1e-10, t_floor: float = T_FLOOR) -> ConjugateReport:
    """Smallest t in (t_floor, t_max] where the vertical frame has det J = 0.

    Zeros are bracketed by sign changes of det J and by local minima of
    sigma_min(J) (which catch even-multiplicity zeros), then refined to
    ``tol`` in t. Raises :class:`NoneFound` or :class:`DetectorAmbiguous`;
    both carry the report.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    n = model.dim
    det = _Detector(n, t_floor, tol)
    dopri54(_frame_rhs(model), 0.0, _vertical_initial(x0), t_max,
            rtol=LOCAL_TOL_FACTOR * int_tol, atol=LOCAL_TOL_FACTOR * int_tol, stop=det)
    trace = (np.array(det.t), np.array(det.det), np.array(det.smin))
    if det.event is None:
        report = ConjugateReport(None, "none", t_max, *trace)
        raise NoneFound(t_max, report)
    status, t_ev, how, s_ev = det.event
    if status == "ambiguous":
        report = ConjugateReport(None, "ambiguous", det.t[-1], *trace, method=how, dip_time=t_ev, dip_sigma=s_ev)
        raise DetectorAmbiguous(t_ev, s_ev, report)
    return ConjugateReport(t_ev, "found", det.t[-1], *trace, method=how,
                           dip_time=t_ev if s_ev is not None else None, dip_sigma=s_ev)


def scan_conjugate(model: MagneticModel, x0: PhasePoint, t_max: float, **kwargs) -> ConjugateReport:
    """Like :func:`first_conjugate_time` but returns the report for every outcome."""
    try:
        return first_conjugate_time(model, x0, t_max, **kwargs)
    except (NoneFound, DetectorAmbiguous) as exc:
        return exc.report


# ---------------------------------------------------------------------------
# Riccati equation
# ---------------------------------------------------------------------------


def riccati_rhs(model: MagneticModel, q, p, A) -> np.ndarray:
    """A' = -[(A + L) H~pp A + (A + L) H~pq + H~qp A + H~qq]."""
    b = hamiltonian_blocks(model, q, p, "H~")
    AL = A + lagrangian_twist(model)
    return -(AL @ b.Hpp @ A + AL @ b.Hpq + b.Hqp @ A + b.Hqq)


@dataclass
class RiccatiHistory:
    """Riccati matrices along an orbit; ``blowup`` is set when A hit a pole."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    A: np.ndarray
    blowup: float | None = None
    solution: Solution | None = field(default=None, repr=False)

    @property
    def blew_up(self) -> bool:
        return self.blowup is not None


def propagate_riccati(model: MagneticModel, A0, x0: PhasePoint, T: float, tol: float = 1e-10,
                      times=None, t0: float = 0.0) -> RiccatiHistory:
    """Integrate the Riccati equation along the gauged orbit through x0.

    Stops with ``blowup`` set once ||A|| exceeds 1e8 while the step size has
    collapsed to below 1e-4 of the median accepted step; the pole location
    is extrapolated from 1/||A||, which is linear in t near a simple pole.
    """
    n = model.dim
    A0 = np.array(A0, dtype=float).reshape(n, n)
    if lagrangian_residual(model, A0) > 1e-10:
        raise InvalidInitial(f"A0^T - A0 differs from the twist matrix by {lagrangian_residual(model, A0):.3e}")
    G = model.Gamma

    def rhs(t, y):
        q, p, A = y[:n], y[n : 2 * n], y[2 * n :].reshape(n, n)
        lam, Hp, Hq, Hpq, Hqq = point_blocks_tilde(model, q, p)
        X = A.T @ Hpq
        Adot = -(lam * (A.T @ A) + X + X.T + Hqq)
        Adot = 0.5 * (Adot + Adot.T)
        return np.concatenate([Hp, -Hq + G @ Hp, Adot.ravel()])

    hs: list[float] = []
    norms: list[tuple[float, float]] = []

    def stop(step: Step) -> bool:
        hs.append(step.h)
        a_norm = float(np.linalg.norm(step.y1[2 * n :]))
        norms.append((step.t1, a_norm))
        return a_norm > BLOWUP_NORM and step.h < BLOWUP_STEP_RATIO * float(np.median(hs))

    y0 = np.concatenate([x0.q, x0.p, A0.ravel()])
    try:
        sol = dopri54(rhs, t0, y0, t0 + T, rtol=LOCAL_TOL_FACTOR * tol, atol=LOCAL_TOL_FACTOR * tol, stop=stop)
    except StepSizeCollapse as exc:
        if not norms or norms[-1][1] < 1e4:
            raise
        sol = None
        collapse_t = exc.t
    blowup = None
    if sol is None or sol.stopped:
        (t1, n1), (t2, n2) = norms[-2], norms[-1]
        u1, u2 = 1.0 / n1, 1.0 / n2
        blowup = t2 - u2 * (t2 - t1) / (u2 - u1) if u1 != u2 else t2
        if sol is None:
            blowup = min(blowup, collapse_t) if np.isfinite(blowup) else collapse_t
    if sol is None:
        return RiccatiHistory(np.array([t for t, _ in norms]), np.zeros((0, n)), np.zeros((0, n)),
                              np.zeros((0, n, n)), blowup)
    if times is None:
        ts, ys = sol.step_ends, sol.states_at_step_ends()
    else:
        ts = np.asarray(times, dtype=float)
        ts = ts[ts <= sol.t_end]
        ys = sol.sample(ts)
    return RiccatiHistory(ts, ys[:, :n], ys[:, n : 2 * n], ys[:, 2 * n :].reshape(len(ts), n, n), blowup, sol)


def riccati_from_vertical(model: MagneticModel, x0: PhasePoint, t_start: float = 1e-3,
                          tol: float = 1e-10) -> tuple[PhasePoint, np.ndarray]:
    """Riccati data at time t_start from the vertical frame: (x(t_start), P J^{-1}).

    The twist part is re-imposed exactly: A is replaced by its symmetric
    part plus -L/2 so that A^T - A = L holds to round-off.
    """
    frame = propagate_vertical(model, x0, t_start, tol, times=[t_start])
    A = frame.riccati_matrices()[0]
    L = lagrangian_twist(model)
    A = 0.5 * (A + A.T) - 0.5 * L
    return PhasePoint(frame.q[0], frame.p[0]), A


def trace_inequality_check(model: MagneticModel, history: RiccatiHistory) -> float:
    """max_t [ d(tr A)/dt + tr(H~qq - H~qp H~pp^{-1} H~pq) ], which must be <= 0."""
    if history.blew_up:
        raise ValueError("trace inequality needs a history without blow-up")
    b = hamiltonian_blocks(model, history.q, history.p, "H~")
    L = lagrangian_twist(model)
    A = history.A
    AL = A + L
    Adot = -(AL @ b.Hpp @ A + AL @ b.Hpq + b.Hqp @ A + b.Hqq)
    schur = b.Hqq - b.Hqp @ np.linalg.solve(b.Hpp, b.Hpq)
    values = np.trace(Adot, axis1=-2, axis2=-1) + np.trace(schur, axis1=-2, axis2=-1)
    return float(np.max(values))


def jacobi_riccati_discrepancy(model: MagneticModel, frame: TangentFrame, cond_max: float = 1e6) -> float:
    """Max |d/dt (P J^{-1}) - Riccati RHS| over samples where J is well conditioned.

    d/dt (P J^{-1}) = P' J^{-1} - P J^{-1} J' J^{-1}, with J', P' from the
    linearized field, so the check is pointwise and independent of any
    Riccati integration.
    """
    worst = 0.0
    for q, p, J, P in zip(frame.q, frame.p, frame.J, frame.P):
        if np.linalg.cond(J) > cond_max:
            continue
        Jdot, Pdot = linearized_field(model, q, p, J, P)
        Jinv = np.linalg.inv(J)
        A = P @ Jinv
        Adot = Pdot @ Jinv - A @ Jdot @ Jinv
        scale = max(1.0, float(np.linalg.norm(A)) ** 2)
        worst = max(worst, float(np.max(np.abs(Adot - riccati_rhs(model, q, p, A)))) / scale)
    return worst


# ---------------------------------------------------------------------------
# Green limit
# ---------------------------------------------------------------------------


@dataclass
class GreenLimitResult:
    times: np.ndarray
    A: list  # A_T or None where skipped
    singular: list[bool]
    sigma_min: np.ndarray
    cauchy: list[float]  # ||A_{T_{k+1}} - A_{T_k}|| over consecutive non-skipped samples
    norms: np.ndarray  # ||A_T|| (nan where skipped)


def flow_backward(model: MagneticModel, x: PhasePoint, T: float, tol: float = 1e-10) -> PhasePoint:
    """g^{-T}(x), integrating the time-reversed gauged field forward."""
    sol = dopri54(_field(model, "gauged", reverse=True), 0.0, x.y, T,
                  rtol=LOCAL_TOL_FACTOR * tol, atol=LOCAL_TOL_FACTOR * tol)
    y = sol.steps[-1].y1
    n = model.dim
    return PhasePoint(y[:n], y[n:])


def green_frame(model: MagneticModel, x: PhasePoint, T: float, tol: float = 1e-10) -> np.ndarray:
    """A_T = P(T) J(T)^{-1} for the vertical frame started at g^{-T}(x).

    Raises :class:`FrameSingular` when sigma_min(J(T)) falls below 1e-7
    times the largest ||J|| seen along the frame.
    """
    y = flow_backward(model, x, T, tol)
    frame = propagate_vertical(model, y, T, tol)
    J, P = frame.J[-1], frame.P[-1]
    sv = np.linalg.svd(frame.J, compute_uv=False)
    scale = float(np.max(sv[:, 0]))
    smin = float(sv[-1, -1])
    if smin <= SINGULAR_REL * scale:
        raise FrameSingular(f"J(T) singular at T={T:.12g}: sigma_min {smin:.3e}")
    return np.linalg.solve(J.T, P.T).T


def green_limit(model: MagneticModel, x: PhasePoint, times, tol: float = 1e-10) -> GreenLimitResult:
    """Approximants A_T of the invariant Lagrangian field at x for increasing T."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and strictly increasing")
    mats, flags, smins = [], [], []
    for T in times:
        y = flow_backward(model, x, T, tol)
        frame = propagate_vertical(model, y, T, tol)
        sv = np.linalg.svd(frame.J, compute_uv=False)
        smin = float(sv[-1, -1])
        smins.append(smin)
        if smin <= SINGULAR_REL * float(np.max(sv[:, 0])):
            mats.append(None)
            flags.append(True)
            continue
        J, P = frame.J[-1], frame.P[-1]
        mats.append(np.linalg.solve(J.T, P.T).T)
        flags.append(False)
    kept = [A for A in mats if A is not None]
    cauchy = [float(np.linalg.norm(b - a)) for a, b in zip(kept, kept[1:])]
    norms = np.array([np.linalg.norm(A) if A is not None else np.nan for A in mats])
    return GreenLimitResult(times, mats, flags, np.array(smins), cauchy, norms)
