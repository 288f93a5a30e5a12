"""Model definition files.

JSON document, ``schema_version = 1``::

    {
      "schema_version": 1,
      "name": "flat-constant-B",            # optional
      "dim": 2,
      "lambda": [{"k": [0, 0], "a": 1.0, "b": 0.0}, ...],
      "beta": [{"i": 1, "j": 2, "modes": [{"k": [0, 0], "a": 1.0, "b": 0.0}]}],
      "alpha": [[...modes of alpha_1...], [...], ...]   # optional
    }

Each mode is a(k) cos(k.q) + b(k) sin(k.q); indices i < j are 1-based.
Serialization writes canonical modes (one per +-k pair, sorted), so
parse -> serialize -> parse reproduces the coefficients exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from .errors import ModelError
from .model import MagneticModel, TwoForm
from .trigpoly import TrigPoly

SCHEMA_VERSION = 1


def _parse_modes(dim: int, raw: Any, where: str) -> TrigPoly:
    if not isinstance(raw, list):
        raise ModelError(f"{where}: expected a list of modes")
    modes = []
    for idx, m in enumerate(raw):
        try:
            k = [int(x) for x in m["k"]]
            a = float(m.get("a", 0.0))
            b = float(m.get("b", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"{where}[{idx}]: malformed mode ({exc})") from exc
        if len(k) != dim:
            raise ModelError(f"{where}[{idx}]: wavevector has length {len(k)}, expected {dim}")
        modes.append((k, a, b))
    return TrigPoly.from_modes(dim, modes)


def dump_modes(f: TrigPoly) -> list[dict]:
    return [{"k": list(k), "a": a, "b": b} for k, a, b in f.modes()]


def parse_model_dict(doc: dict) -> dict:
    """Validate a model document and return its parsed pieces.

    Returns a dict with ``name``, ``lam`` (TrigPoly), ``beta`` (TwoForm) and
    ``alpha`` (tuple of TrigPoly or None). No positivity or closedness
    checks happen here; :func:`build_model` does those.
    """
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema_version {doc.get('schema_version')!r}; expected {SCHEMA_VERSION}")
    try:
        dim = int(doc["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError("model needs an integer 'dim'") from exc
    if dim < 2:
        raise ModelError("dim must be at least 2")
    lam = _parse_modes(dim, doc.get("lambda"), "lambda")
    comps = {}
    for idx, entry in enumerate(doc.get("beta", [])):
        try:
            i, j = int(entry["i"]) - 1, int(entry["j"]) - 1
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"beta[{idx}]: needs integer 'i' and 'j'") from exc
        if not (0 <= i < j < dim):
            raise ModelError(f"beta[{idx}]: need 1 <= i < j <= {dim}, got ({i + 1}, {j + 1})")
        f = _parse_modes(dim, entry.get("modes", []), f"beta[{idx}].modes")
        comps[(i, j)] = comps[(i, j)] + f if (i, j) in comps else f
    alpha = None
    if doc.get("alpha") is not None:
        raw = doc["alpha"]
        if not isinstance(raw, list) or len(raw) != dim:
            raise ModelError(f"alpha must be a list of {dim} mode lists")
        alpha = tuple(_parse_modes(dim, r, f"alpha[{c}]") for c, r in enumerate(raw))
    return {"name": doc.get("name", ""), "lam": lam, "beta": TwoForm(dim, comps), "alpha": alpha}


def serialize_parts(lam: TrigPoly, beta: TwoForm, alpha=None, name: str = "") -> dict:
    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    if name:
        doc["name"] = name
    doc["dim"] = lam.dim
    doc["lambda"] = dump_modes(lam)
    doc["beta"] = [
        {"i": i + 1, "j": j + 1, "modes": dump_modes(f)} for (i, j), f in sorted(beta.components.items()) if not f.is_zero
    ]
    if alpha is not None:
        doc["alpha"] = [dump_modes(a) for a in alpha]
    return doc


def serialize_model(model: MagneticModel, name: str = "", include_alpha: bool = False) -> dict:
    alpha = model.gauge.alpha if include_alpha else None
    return serialize_parts(model.lam.lam, model.beta, alpha, name)


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def build_model(parts: dict) -> MagneticModel:
    return MagneticModel.build(parts["lam"], parts["beta"], parts["alpha"])


def load_model(path: str | Path) -> MagneticModel:
    return build_model(parse_model_dict(json.loads(Path(path).read_text())))


def save_model(model: MagneticModel, path: str | Path, name: str = "") -> None:
    Path(path).write_text(dumps(serialize_model(model, name)))


def model_hash(model: MagneticModel) -> str:
    """SHA-256 of the canonical serialization (lambda and beta only)."""
    doc = serialize_model(model)
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
