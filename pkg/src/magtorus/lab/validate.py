"""Self-check suite covering every module's invariants.

Each check is a small, fast instance of a property the library relies on.
Failures are report content, never exceptions: :func:`run_validate`
always returns a report, and the CLI turns ``ok == False`` into exit 1.
"""

from __future__ import annotations

import traceback
from typing import Callable

import numpy as np

from .. import averaging
from ..dynamics import PhasePoint, gauged_vector_field, integrate, to_gauged, twisted_vector_field
from ..errors import ConfigInvalid, FrameSingular, NoneFound
from ..model import (MagneticModel, constant_field_model, decompose, gauge_residual, hamiltonian,
                     hamiltonian_blocks)
from ..modelio import build_model, model_hash, parse_model_dict, serialize_model
from ..trigpoly import TrigPoly
from ..variational import (first_conjugate_time, green_frame, jacobi_riccati_discrepancy, lagrangian_residual,
                           propagate_riccati, propagate_vertical, riccati_from_vertical, trace_inequality_check)
from .config import bundled_model_doc
from .sampling import level_point, sample_initial_conditions


def fd_block_error(model: MagneticModel, q, p, which: str = "H", h1: float = 1e-6, h2: float = 1e-5) -> float:
    """Largest relative mismatch between analytic blocks and central differences.

    First derivatives are differenced from the Hamiltonian value, second
    derivatives from the analytic first derivatives. Each block's error is
    scaled by max(1, max |block|).
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    n = q.size
    b = hamiltonian_blocks(model, q, p, which)
    eye = np.eye(n)
    H = lambda qq, pp: float(hamiltonian(model, qq, pp, which))
    fd_Hp = np.array([(H(q, p + h1 * e) - H(q, p - h1 * e)) / (2 * h1) for e in eye])
    fd_Hq = np.array([(H(q + h1 * e, p) - H(q - h1 * e, p)) / (2 * h1) for e in eye])

    def first(qq, pp):
        bb = hamiltonian_blocks(model, qq, pp, which)
        return bb.Hp, bb.Hq

    d_dq = [first(q + h2 * e, p) for e in eye], [first(q - h2 * e, p) for e in eye]
    d_dp = [first(q, p + h2 * e) for e in eye], [first(q, p - h2 * e) for e in eye]
    # column j holds the derivative in direction j
    fd_Hpp = np.array([(a[0] - c[0]) / (2 * h2) for a, c in zip(*d_dp)]).T
    fd_Hpq = np.array([(a[0] - c[0]) / (2 * h2) for a, c in zip(*d_dq)]).T
    fd_Hqp = np.array([(a[1] - c[1]) / (2 * h2) for a, c in zip(*d_dp)]).T
    fd_Hqq = np.array([(a[1] - c[1]) / (2 * h2) for a, c in zip(*d_dq)]).T
    worst = 0.0
    for exact, approx in ((b.Hp, fd_Hp), (b.Hq, fd_Hq), (b.Hpp, fd_Hpp), (b.Hpq, fd_Hpq), (b.Hqp, fd_Hqp),
                          (b.Hqq, fd_Hqq)):
        worst = max(worst, float(np.max(np.abs(exact - approx))) / max(1.0, float(np.max(np.abs(exact)))))
    return worst


def example_models() -> dict[str, MagneticModel]:
    names = ("flat_constant_b", "flat_free", "flat_exact_beta", "conformal_n3", "cos_family_eps01",
             "cos_family_eps03", "perturbed_constant_b")
    return {name: build_model(parse_model_dict(bundled_model_doc(name))) for name in names}


# ---------------------------------------------------------------------------
# individual checks: each returns (passed, value, threshold, detail)
# ---------------------------------------------------------------------------


def _check_derivatives(models):
    rng = np.random.default_rng(7)
    worst = 0.0
    for m in models.values():
        n = m.dim
        for _ in range(5):
            q = rng.uniform(0, 2 * np.pi, n)
            p = rng.normal(size=n)
            for which in ("H", "H~"):
                worst = max(worst, fd_block_error(m, q, p, which))
    return worst < 1e-6, worst, 1e-6, "analytic blocks vs central differences"


def _check_round_trip(models):
    bad = []
    for name, m in models.items():
        doc = serialize_model(m)
        m2 = build_model(parse_model_dict(doc))
        if serialize_model(m2) != doc or model_hash(m2) != model_hash(m):
            bad.append(name)
    return not bad, len(bad), 0, "model files re-serialize identically" + (f"; failed: {bad}" if bad else "")


def _check_gauge_reconstruction(models):
    worst = 0.0
    for m in models.values():
        worst = max(worst, gauge_residual(m.beta, decompose(m.beta)))
    return worst < 1e-10, worst, 1e-10, "d(alpha) + Gamma reproduces beta"


def _check_orientation(models):
    m = constant_field_model(2, 1.0)
    _, pdot = twisted_vector_field(m, np.zeros(2), np.array([1.0, 0.0]))
    _, pdot_g = gauged_vector_field(m, np.zeros(2), np.array([1.0, 0.0]))
    err = float(max(np.max(np.abs(pdot - [0.0, -1.0])), np.max(np.abs(pdot_g - [0.0, -1.0]))))
    return err < 1e-14, err, 1e-14, "B = 1 turns the velocity clockwise in both pictures"


def _check_gauge_equivalence(models):
    m = models["flat_exact_beta"]
    x = level_point(m, [0.3, 1.1], [0.6, 0.8])
    xt = PhasePoint(x.q, x.p - m.alpha(x.q))
    ts = np.linspace(0, 10, 41)
    a = integrate(m, x, 10.0, 1e-10, ts, "gauged")
    b = integrate(m, xt, 10.0, 1e-10, ts, "twisted")
    dq = float(np.max(np.abs(a.q_lift - b.q_lift)))
    dp = float(np.max(np.abs(a.p - to_gauged(m, b.q_lift, b.p))))
    err = max(dq, dp)
    return err < 1e-8, err, 1e-8, "twisted and gauged orbits agree under p -> p + alpha"


def _check_energy(models):
    m = models["perturbed_constant_b"]
    x = level_point(m, [0.4, 2.0], [0.0, 1.0])
    traj = integrate(m, x, 20.0, 1e-10)
    err = float(np.max(np.abs(traj.H - 0.5)))
    return err < 1e-9, err, 1e-9, "energy drift over T = 20 at tol 1e-10"


def _check_constant_field_conjugate(models):
    worst = 0.0
    for B in (0.5, 1.0, 2.0):
        m = constant_field_model(2, B)
        x = level_point(m, [1.0, 2.0], [np.cos(0.7), np.sin(0.7)])
        rep = first_conjugate_time(m, x, 2 * np.pi / B + 1.0)
        worst = max(worst, abs(rep.t_star - 2 * np.pi / B))
    return worst < 1e-6, worst, 1e-6, "first conjugate time 2 pi / B"


def _check_flat_control(models):
    m = models["flat_free"]
    _, _, pts = sample_initial_conditions(m, 3, 0)
    found = 0
    for x in pts:
        try:
            first_conjugate_time(m, x, 50.0)
            found += 1
        except NoneFound:
            pass
    return found == 0, found, 0, "no conjugate point on the flat torus without field"


def _check_jacobi_riccati(models):
    m = models["perturbed_constant_b"]
    x = level_point(m, [0.2, 0.9], [0.8, 0.6])
    frame = propagate_vertical(m, x, 4.0, 1e-10, times=np.linspace(0.05, 4.0, 40))
    pointwise = jacobi_riccati_discrepancy(m, frame)
    mc = constant_field_model(2, 1.0)
    xc = level_point(mc, [0.5, 0.5], [1.0, 0.0])
    x1, A1 = riccati_from_vertical(mc, xc, 1e-3)
    hist = propagate_riccati(mc, A1, x1, 8.0, t0=1e-3)
    blow = abs(hist.blowup - 2 * np.pi) if hist.blew_up else np.inf
    ok = pointwise < 1e-6 and blow < 1e-6
    return ok, max(pointwise, blow), 1e-6, f"pointwise {pointwise:.2e}, blow-up vs 2 pi {blow:.2e}"


def _check_lagrangian_and_trace(models):
    m = models["perturbed_constant_b"]
    x = level_point(m, [1.3, 0.4], [0.6, -0.8])
    x1, A1 = riccati_from_vertical(m, x, 1e-3)
    hist = propagate_riccati(m, A1, x1, 1.0, t0=1e-3, times=np.linspace(1e-3, 1.0, 50))
    if hist.blew_up:
        return False, np.inf, 1e-8, "unexpected blow-up on a short window"
    resid = max(lagrangian_residual(m, A) for A in hist.A)
    trace = trace_inequality_check(m, hist)
    ok = resid < 1e-8 and trace <= 1e-8
    return ok, max(resid, trace), 1e-8, f"Lagrangian residual {resid:.2e}, trace inequality max {trace:.2e}"


def _check_green(models):
    m = constant_field_model(2, 1.0)
    x = level_point(m, [0.0, 0.0], [1.0, 0.0])
    try:
        green_frame(m, x, 2 * np.pi)
        flagged = False
    except FrameSingular:
        flagged = True
    free = models["flat_free"]
    xf = level_point(free, [0.0, 0.0], [1.0, 0.0])
    ratio = np.linalg.norm(green_frame(free, xf, 20.0)) / np.linalg.norm(green_frame(free, xf, 10.0))
    ok = flagged and abs(ratio - 0.5) <= 0.1
    return ok, float(ratio), 0.5, f"singular at 2 pi flagged: {flagged}; flat decay ratio {ratio:.4f}"


def _check_sigma_gauge(models):
    worst_gap = worst_odd = 0.0
    for name in ("conformal_n3", "flat_exact_beta"):
        m = models[name]
        grid = averaging.QuadratureGrid.build(m.dim, 12, 10 if m.dim == 3 else 32)
        worst_gap = max(worst_gap, averaging.gauge_invariance_check(m, grid))
        worst_odd = max(worst_odd, abs(averaging.odd_integrand_check(m, grid)))
    ok = worst_gap < 1e-8 and worst_odd < 1e-12
    return ok, worst_gap, 1e-8, f"|sigma(H~) - sigma(H)| {worst_gap:.2e}, odd integrand {worst_odd:.2e}"


def _check_sigma_closed_form(models):
    m = models["cos_family_eps01"]
    grid = averaging.QuadratureGrid.build(3, 16, 10)
    direct = averaging.sigma_direct(m, "H", grid, check=False).value
    closed = averaging.sigma_closed_form(m, 16)
    rel = abs(direct - closed) / abs(closed)
    m2 = MagneticModel.build(TrigPoly.from_modes(2, [((0, 0), 1.0, 0.0), ((1, 0), 0.3, 0.0)]))
    s2 = averaging.sigma_direct(m2, "H", averaging.QuadratureGrid.build(2, 48, 32), check=False).value
    ok = rel < 1e-6 and abs(s2) < 1e-10 and direct > 0
    return ok, rel, 1e-6, f"n = 3 relative gap {rel:.2e} (sigma {direct:.6g}); n = 2 sigma {s2:.2e}"


CHECKS: list[tuple[str, Callable]] = [
    ("derivative_oracle", _check_derivatives),
    ("model_round_trip", _check_round_trip),
    ("gauge_reconstruction", _check_gauge_reconstruction),
    ("orientation", _check_orientation),
    ("gauge_equivalence", _check_gauge_equivalence),
    ("energy_conservation", _check_energy),
    ("constant_field_conjugate", _check_constant_field_conjugate),
    ("flat_control", _check_flat_control),
    ("jacobi_riccati", _check_jacobi_riccati),
    ("lagrangian_and_trace", _check_lagrangian_and_trace),
    ("green_limit", _check_green),
    ("sigma_gauge_invariance", _check_sigma_gauge),
    ("sigma_closed_form", _check_sigma_closed_form),
]


def run_validate(cfg=None) -> dict:
    """Run every check; with a config, also build its model and report the outcome.

    Returns ``{"ok", "passed", "failed", "checks": [...]}``. Timing is kept
    out of the report so that it stays byte-reproducible.
    """
    results = []
    models = example_models()
    if cfg is not None and cfg.model is not None:
        try:
            m = cfg.load_model()
            results.append({"name": "model_construction", "passed": True, "value": None, "threshold": None,
                            "detail": f"model {cfg.model} built (hash {model_hash(m)[:12]})"})
        except ConfigInvalid as exc:
            results.append({"name": "model_construction", "passed": False, "value": None, "threshold": None,
                            "detail": str(exc)})
    for name, fn in CHECKS:
        try:
            passed, value, threshold, detail = fn(models)
        except Exception as exc:  # a crashing check is a failing check
            passed, value, threshold = False, None, None
            detail = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
        results.append({"name": name, "passed": bool(passed), "value": value, "threshold": threshold,
                        "detail": detail})
    failed = [r["name"] for r in results if not r["passed"]]
    return {"ok": not failed, "passed": len(results) - len(failed), "failed": failed, "checks": results}
