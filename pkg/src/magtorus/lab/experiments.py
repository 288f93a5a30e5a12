"""Experiment dispatch and the append-only run index.

Every run stages its outputs in a hidden directory under the output root.
Only a run that finishes is moved to ``run-NNNN-<kind>/`` and indexed in
``runs.jsonl``; a crash removes the staging directory, so no unindexed
artifacts survive. Output files carry no timestamps or host data, so a
fixed config and seed reproduce them byte for byte.
"""

from __future__ import annotations

import contextlib
import datetime as _dt
import fcntl
import json
import math
import os
import shutil
import uuid
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import averaging
from ..dynamics import PhasePoint, integrate, normalize_energy, trajectory_to_csv
from ..errors import ConfigInvalid, DetectorAmbiguous, MagtorusError, NoneFound
from ..model import MagneticModel, TwoForm, gauge_residual
from ..modelio import dump_modes, model_hash
from ..variational import first_conjugate_time, green_limit
from .config import ExperimentConfig
from .sampling import level_point, sample_initial_conditions

INDEX_NAME = "runs.jsonl"


def _clean(x: Any) -> Any:
    """JSON-safe copy: numpy to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    return x


def dump_json(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    run_id: str
    kind: str
    config: dict
    model_hash: str | None
    started: str
    finished: str
    artifacts: list[str]
    summary: dict
    ok: bool = True

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), sort_keys=True)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def read_index(root: str | Path) -> list[RunRecord]:
    path = Path(root) / INDEX_NAME
    if not path.exists():
        return []
    return [RunRecord(**json.loads(line)) for line in path.read_text().splitlines() if line.strip()]


class RunStore:
    """Output root holding run directories and the run index."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.index = self.root / INDEX_NAME

    @contextlib.contextmanager
    def staging(self):
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.root / f".partial-{uuid.uuid4().hex}"
        tmp.mkdir()
        try:
            yield tmp
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise

    @contextlib.contextmanager
    def _locked(self):
        with open(self.root / ".lock", "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def commit(self, tmp: Path, make_record: Callable[[str, list[str]], RunRecord]) -> RunRecord:
        """Move staged outputs into place and append the record (single writer)."""
        try:
            with self._locked():
                existing = len(read_index(self.root))
                run_id = f"run-{existing + 1:04d}"
                record = make_record(run_id, [])
                dest = self.root / f"{run_id}-{record.kind}"
                files = sorted(str(p.relative_to(tmp)) for p in tmp.rglob("*") if p.is_file())
                os.replace(tmp, dest)
                record.artifacts = [f"{dest.name}/{f}" for f in files]
                with open(self.index, "a") as fh:
                    fh.write(record.to_json() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            return record
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise


# ---------------------------------------------------------------------------
# conjugate-point scan
# ---------------------------------------------------------------------------

_WORKER_MODEL: MagneticModel | None = None


def _init_worker(model: MagneticModel) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _scan_one(args) -> tuple[str, float | None, str | None, str | None]:
    x0, t_max, tol, want_trace = args
    model = _WORKER_MODEL
    try:
        rep = first_conjugate_time(model, x0, t_max, tol=tol, int_tol=tol)
        status, t = "found", rep.t_star
    except NoneFound as exc:
        rep, status, t = exc.report, "none", None
    except DetectorAmbiguous as exc:
        rep, status, t = exc.report, "ambiguous", None
    except MagtorusError as exc:  # integrator failure on this orbit only
        return "ambiguous", None, None, f"{type(exc).__name__}: {exc}"
    return status, t, rep.trace_csv() if want_trace else None, None


def _run_scan(model: MagneticModel, points: list[PhasePoint], t_max: float, tol: float,
              traces: bool, workers: int) -> list[tuple]:
    jobs = [(x, t_max, tol, traces) for x in points]
    if workers <= 1:
        _init_worker(model)
        return [_scan_one(j) for j in jobs]
    # results come back in submission order, so slot i always holds orbit i
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(model,)) as pool:
        return list(pool.map(_scan_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def scan_csv(q0: np.ndarray, dirs: np.ndarray, results: list[tuple]) -> str:
    n = q0.shape[1]
    head = ["id"] + [f"q0_{i + 1}" for i in range(n)] + [f"dir_{i + 1}" for i in range(n)] + ["t_conj", "status"]
    lines = [",".join(head)]
    for i, (q, d, (status, t, _, _)) in enumerate(zip(q0, dirs, results)):
        row = [str(i)] + [_fmt(x) for x in q] + [_fmt(x) for x in d] + ["" if t is None else _fmt(t), status]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def scan_summary(results: list[tuple], t_max: float, tol: float, mhash: str) -> dict:
    ts = np.array([t for s, t, _, _ in results if s == "found"])
    counts = {s: sum(r[0] == s for r in results) for s in ("found", "none", "ambiguous")}
    return {
        "model_hash": mhash,
        "samples": len(results),
        "T_max": t_max,
        "tol": tol,
        **counts,
        "fraction_found": counts["found"] / len(results),
        "t_min": float(ts.min()) if ts.size else None,
        "t_median": float(np.median(ts)) if ts.size else None,
        "t_max_found": float(ts.max()) if ts.size else None,
        "errors": [{"id": i, "message": m} for i, (_, _, _, m) in enumerate(results) if m],
    }


def control_model(model: MagneticModel) -> MagneticModel:
    """Same conformal factor, beta = 0."""
    return MagneticModel.build(model.lam.lam, TwoForm.zero(model.dim))


def run_conjugate_demo(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Seeded conjugate-point scan on {H~ = 1/2}, optionally with a beta = 0 control arm.

    Writes ``scan.csv`` and ``summary.json`` (plus ``control_scan.csv`` /
    ``control_summary.json`` and per-orbit traces when requested) into
    ``out_dir`` if given. Returns the summary; ``summary["ok"]`` is False
    when the control arm on a flat model reports a certified conjugate point.
    """
    model = cfg.load_model()
    t_max, tol = cfg.horizon, cfg.tol
    q0, dirs, points = sample_initial_conditions(model, cfg.samples, cfg.seed)
    arms = [("", model)]
    if cfg.control:
        arms.append(("control_", control_model(model)))
    summary: dict[str, Any] = {"ok": True}
    for prefix, m in arms:
        pts = points if m is model else [level_point(m, q, d) for q, d in zip(q0, dirs)]
        results = _run_scan(m, pts, t_max, tol, cfg.traces, cfg.workers)
        s = scan_summary(results, t_max, tol, model_hash(m))
        if prefix:
            s["flat"] = bool(m.lam.lam.is_constant)
            s["control_ok"] = not (s["flat"] and s["found"] > 0)
            summary["ok"] = summary["ok"] and s["control_ok"]
            summary["control"] = s
        else:
            summary.update(s)
        if out_dir is not None:
            out = Path(out_dir)
            (out / f"{prefix}scan.csv").write_text(scan_csv(q0, dirs, results))
            if cfg.traces:
                tdir = out / f"{prefix}traces"
                tdir.mkdir(exist_ok=True)
                for i, r in enumerate(results):
                    if r[2] is not None:
                        (tdir / f"orbit_{i:05d}.csv").write_text(r[2])
    if out_dir is not None:
        (Path(out_dir) / "summary.json").write_text(dump_json(summary))
    return summary


# ---------------------------------------------------------------------------
# other kinds
# ---------------------------------------------------------------------------


def _initial_point(cfg: ExperimentConfig, model: MagneticModel) -> PhasePoint:
    """x0 from q0/p0 (p0 rescaled onto the level), else the first seeded sample."""
    if cfg.q0 is not None and cfg.p0 is not None:
        return normalize_energy(model, cfg.q0, cfg.p0, cfg.formulation)
    if cfg.q0 is not None or cfg.p0 is not None:
        raise ConfigInvalid("q0 and p0 must be given together", {"q0": "needs p0", "p0": "needs q0"})
    _, _, pts = sample_initial_conditions(model, 1, cfg.seed)
    x = pts[0]
    if cfg.formulation == "twisted":
        x = PhasePoint(x.q, x.p - model.alpha(x.q))
    return x


def _run_integrate(cfg: ExperimentConfig, model: MagneticModel, out: Path) -> dict:
    x0 = _initial_point(cfg, model)
    traj = integrate(model, x0, cfg.horizon, tol=cfg.tol, times=cfg.times, formulation=cfg.formulation)
    (out / "trajectory.csv").write_text(trajectory_to_csv(traj))
    return {"samples": len(traj.t), "steps": traj.steps, "rejected": traj.rejected, "max_drift": traj.max_drift,
            "max_energy_error": float(np.max(np.abs(traj.H - 0.5)))}


def _sigma_grid(cfg: ExperimentConfig, model: MagneticModel) -> averaging.QuadratureGrid:
    N = cfg.grid or max(16, averaging.default_grid_size(model))
    return averaging.QuadratureGrid.build(model.dim, N, cfg.sphere)


def _run_sigma(cfg: ExperimentConfig, model: MagneticModel, out: Path) -> dict:
    report = averaging.sigma_report(model, _sigma_grid(cfg, model), model_hash(model), cfg.refinements)
    (out / "sigma_report.json").write_text(dump_json(report))
    return {k: report[k] for k in ("sigma_H", "sigma_H_tilde", "closed_form", "discrepancy_gauge", "converged")}


def _run_green(cfg: ExperimentConfig, model: MagneticModel, out: Path) -> dict:
    x = _initial_point(cfg, model)
    times = cfg.times or [cfg.horizon / 4, cfg.horizon / 2, cfg.horizon]
    res = green_limit(model, x, times, cfg.tol)
    doc = {
        "model_hash": model_hash(model),
        "x": {"q": x.q, "p": x.p},
        "times": res.times,
        "A": [None if A is None else A for A in res.A],
        "singular": res.singular,
        "sigma_min": res.sigma_min,
        "norms": res.norms,
        "cauchy": res.cauchy,
    }
    (out / "green_limit.json").write_text(dump_json(doc))
    return {"singular": res.singular, "norms": res.norms, "cauchy": res.cauchy}


def _run_decompose(cfg: ExperimentConfig, model: MagneticModel, out: Path) -> dict:
    g = model.gauge
    residual = gauge_residual(model.beta, g)
    doc = {"model_hash": model_hash(model), "Gamma": g.Gamma, "alpha": [dump_modes(a) for a in g.alpha],
           "residual": residual}
    (out / "gauge.json").write_text(dump_json(doc))
    return {"residual": residual, "Gamma": g.Gamma}


def _run_validate(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool]:
    from .validate import run_validate

    report = run_validate(cfg if cfg.model is not None else None)
    (out / "validate_report.json").write_text(dump_json(report))
    return {"passed": report["passed"], "failed": report["failed"]}, report["ok"]


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> RunRecord:
    """Run one configured experiment and index its outputs.

    Config and model problems raise :class:`ConfigInvalid` before anything
    is written; any failure during the run removes the staged outputs.
    """
    cfg.validate()
    root = Path(out or cfg.out or "runs")
    model = cfg.load_model() if cfg.model is not None and cfg.kind != "validate" else None
    mhash = model_hash(model) if model is not None else None
    store = RunStore(root)
    started = _now()
    ok = True
    with store.staging() as tmp:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", averaging.GridTooCoarse)
            if cfg.kind == "conjugate-scan":
                summary = run_conjugate_demo(cfg, tmp)
                ok = summary["ok"]
            elif cfg.kind == "integrate":
                summary = _run_integrate(cfg, model, tmp)
            elif cfg.kind == "sigma":
                summary = _run_sigma(cfg, model, tmp)
            elif cfg.kind == "green-limit":
                summary = _run_green(cfg, model, tmp)
            elif cfg.kind == "decompose":
                summary = _run_decompose(cfg, model, tmp)
            else:
                summary, ok = _run_validate(cfg, tmp)
        notes = sorted({str(w.message) for w in caught})
        if notes:
            summary["warnings"] = notes
        return store.commit(tmp, lambda run_id, arts: RunRecord(
            run_id, cfg.kind, cfg.snapshot(), mhash, started, _now(), arts, summary, ok))
