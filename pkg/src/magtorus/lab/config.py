"""Experiment configuration with range checks and model lookup."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from ..errors import ConfigInvalid, ModelError, NotClosed
from ..model import MagneticModel
from ..modelio import build_model, parse_model_dict

KINDS = ("integrate", "conjugate-scan", "sigma", "green-limit", "decompose", "validate")

# documented ranges (inclusive)
T_RANGE = (1e-6, 1e4)
TOL_RANGE = (1e-13, 1e-4)
SAMPLES_RANGE = (1, 100_000)
GRID_RANGE = (4, 256)
SPHERE_RANGE = (2, 128)
WORKERS_RANGE = (1, 64)

DEFAULT_T = {"integrate": 10.0, "conjugate-scan": 50.0, "green-limit": 40.0}


def bundled_models() -> list[str]:
    root = resources.files("magtorus.lab") / "models"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_model_doc(name: str) -> dict:
    path = resources.files("magtorus.lab") / "models" / f"{name}.json"
    return json.loads(path.read_text())


@dataclass
class ExperimentConfig:
    """One experiment: a model plus the operation to run on it.

    ``model`` names a bundled example (see :func:`bundled_models`) or a path
    to a model file; relative paths resolve against ``base_dir``.
    """

    kind: str
    model: str | None = None
    seed: int = 0
    T: float | None = None
    tol: float = 1e-10
    samples: int = 100
    grid: int | None = None
    sphere: int | None = None
    times: list[float] | None = None
    q0: list[float] | None = None
    p0: list[float] | None = None
    formulation: str = "gauged"
    control: bool = False
    traces: bool = False
    workers: int = 1
    refinements: int = 1
    out: str | None = None
    base_dir: str = field(default=".", repr=False)

    # -- construction ----------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigInvalid("unknown configuration keys", {k: "unknown key" for k in unknown})
        if "kind" not in data:
            raise ConfigInvalid("configuration needs a kind", {"kind": "missing"})
        cfg = cls(**data, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigInvalid(f"config file {path} not found", {"config": "not found"}) from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config file {path} is not valid JSON: {exc}", {"config": str(exc)}) from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object", {"config": "not an object"})
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, path.parent)

    def snapshot(self) -> dict[str, Any]:
        """Plain-data copy of the resolved parameters (no paths to outputs)."""
        d = dataclasses.asdict(self)
        for k in ("out", "base_dir"):
            d.pop(k)
        d["T"] = self.horizon
        return d

    @property
    def horizon(self) -> float | None:
        return self.T if self.T is not None else DEFAULT_T.get(self.kind)

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        errs: dict[str, str] = {}

        def in_range(name, value, lo, hi, integer=False):
            if value is None:
                return
            if isinstance(value, bool) or not isinstance(value, (int, float)) or (integer and not isinstance(value, int)):
                errs[name] = f"expected {'an integer' if integer else 'a number'}, got {value!r}"
            elif not lo <= value <= hi:
                errs[name] = f"{value!r} outside [{lo:g}, {hi:g}]"

        if self.kind not in KINDS:
            errs["kind"] = f"{self.kind!r} is not one of {', '.join(KINDS)}"
        if self.kind not in ("validate",) and self.model is None:
            errs["model"] = "missing"
        in_range("T", self.T, *T_RANGE)
        in_range("tol", self.tol, *TOL_RANGE)
        in_range("samples", self.samples, *SAMPLES_RANGE, integer=True)
        in_range("grid", self.grid, *GRID_RANGE, integer=True)
        in_range("sphere", self.sphere, *SPHERE_RANGE, integer=True)
        in_range("workers", self.workers, *WORKERS_RANGE, integer=True)
        in_range("refinements", self.refinements, 0, 3, integer=True)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            errs["seed"] = f"expected a non-negative integer, got {self.seed!r}"
        if self.formulation not in ("gauged", "twisted"):
            errs["formulation"] = "must be 'gauged' or 'twisted'"
        if self.times is not None:
            try:
                ts = [float(t) for t in self.times]
            except (TypeError, ValueError):
                errs["times"] = "must be a list of numbers"
            else:
                if not ts or any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] < 0:
                    errs["times"] = "must be non-negative and strictly increasing (at least one entry)"
                elif self.kind == "green-limit" and ts[0] <= 0:
                    errs["times"] = "green-limit times must be positive"
                elif self.kind == "integrate" and self.horizon is not None and ts[-1] > self.horizon:
                    errs["times"] = f"last time exceeds T = {self.horizon:g}"
        for name in ("q0", "p0"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, list) or not all(isinstance(x, (int, float)) for x in v)):
                errs[name] = "must be a list of numbers"
        if errs:
            raise ConfigInvalid("invalid configuration: " + "; ".join(f"{k}: {v}" for k, v in errs.items()), errs)

    # -- model resolution --------------------------------------------------
    def model_doc(self) -> dict:
        ref = self.model
        path = Path(ref)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        if path.is_file():
            try:
                return json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"model file {path} is not valid JSON", {"model": str(exc)}) from exc
        if ref in bundled_models():
            return bundled_model_doc(ref)
        raise ConfigInvalid(f"model {ref!r} is neither a file nor a bundled model",
                            {"model": f"unknown; bundled: {', '.join(bundled_models())}"})

    def load_model(self) -> MagneticModel:
        """Build the model, turning construction failures into ConfigInvalid."""
        doc = self.model_doc()
        try:
            model = build_model(parse_model_dict(doc))
        except NotClosed as exc:
            raise ConfigInvalid(str(exc), {"model.beta": f"not closed (residual {exc.residual:.3e})",
                                           "residual": exc.residual}) from exc
        except ModelError as exc:
            raise ConfigInvalid(f"model construction failed: {exc}", {"model": str(exc)}) from exc
        n = model.dim
        for name in ("q0", "p0"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ConfigInvalid(f"{name} has length {len(v)}, model dimension is {n}", {name: "wrong length"})
        return model
