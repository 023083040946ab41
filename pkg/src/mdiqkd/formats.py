"""Measurement documents (JSON) and the bundled measurement fixtures.

The document layout is described in ``docs/FORMATS.md``.  QBERs are
fractions, not percentages.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .protocol import X_LABELS, MeasurementSet, ProtocolParameters

FORMAT_ID = "mdiqkd-measurements/1"

_MATRIX = {
    "type": "array",
    "minItems": 3,
    "maxItems": 3,
    "items": {
        "type": "array",
        "minItems": 3,
        "maxItems": 3,
        "items": {"type": "number", "minimum": 0, "maximum": 1},
    },
}
_PER_FLUX = {
    "type": "object",
    "required": list(X_LABELS),
    "additionalProperties": False,
    "properties": {k: {"type": "number", "minimum": 0, "maximum": 1} for k in X_LABELS},
}

MEASUREMENT_SCHEMA = {
    "type": "object",
    "required": ["format", "n_total", "z", "x"],
    "properties": {
        "format": {"const": FORMAT_ID},
        "label": {"type": "string"},
        "total_loss_db": {"type": "number"},
        "n_total": {"type": "number", "exclusiveMinimum": 0},
        "clock_hz": {"type": "number", "exclusiveMinimum": 0},
        "z": {
            "type": "object",
            "required": ["flux", "prob", "gain", "qber"],
            "additionalProperties": False,
            "properties": {
                "flux": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "prob": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "gain": {"type": "number", "minimum": 0, "maximum": 1},
                "qber": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "x": {
            "type": "object",
            "required": ["fluxes", "probs", "gain", "qber"],
            "additionalProperties": False,
            "properties": {
                "fluxes": _PER_FLUX,
                "probs": _PER_FLUX,
                "gain": _MATRIX,
                "qber": _MATRIX,
            },
        },
    },
}


class FormatError(ValueError):
    """A document that does not describe a valid measurement set."""


def measurement_from_document(doc: dict) -> MeasurementSet:
    try:
        jsonschema.validate(doc, MEASUREMENT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"{where}: {exc.message}") from None
    z, x = doc["z"], doc["x"]
    try:
        params = ProtocolParameters(
            s=z["flux"],
            u=x["fluxes"]["u"],
            v=x["fluxes"]["v"],
            w=x["fluxes"]["w"],
            p_z_s=z["prob"],
            p_x_u=x["probs"]["u"],
            p_x_v=x["probs"]["v"],
            p_x_w=x["probs"]["w"],
        )
        kwargs = {"clock_hz": doc["clock_hz"]} if "clock_hz" in doc else {}
        return MeasurementSet(
            params=params,
            n_total=doc["n_total"],
            z_gain=z["gain"],
            z_qber=z["qber"],
            x_gain=np.array(x["gain"], dtype=float),
            x_qber=np.array(x["qber"], dtype=float),
            label=doc.get("label", ""),
            **kwargs,
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def measurement_to_document(ms: MeasurementSet, total_loss_db: float | None = None) -> dict:
    p = ms.params
    doc = {
        "format": FORMAT_ID,
        "label": ms.label,
        "n_total": float(ms.n_total),
        "clock_hz": float(ms.clock_hz),
        "z": {"flux": p.s, "prob": p.p_z_s, "gain": float(ms.z_gain), "qber": float(ms.z_qber)},
        "x": {
            "fluxes": dict(zip(X_LABELS, p.x_fluxes)),
            "probs": dict(zip(X_LABELS, p.x_probs)),
            "gain": ms.x_gain.tolist(),
            "qber": ms.x_qber.tolist(),
        },
    }
    if total_loss_db is not None:
        doc["total_loss_db"] = float(total_loss_db)
    return doc


def load_document(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None


def load_measurements(path) -> MeasurementSet:
    return measurement_from_document(load_document(path))


def _fixture_dir():
    return resources.files("mdiqkd") / "data"


def fixture_losses() -> list[int]:
    """Total losses (dB) with a bundled measurement fixture."""
    names = [p.name for p in _fixture_dir().iterdir() if p.name.startswith("loss_")]
    return sorted(int(n[len("loss_"):-len("db.json")]) for n in names)


def fixture_path(total_loss_db: int) -> Path:
    path = _fixture_dir() / f"loss_{int(total_loss_db)}db.json"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled fixture for {total_loss_db} dB")
    return Path(str(path))


def fixture_document(total_loss_db: int) -> dict:
    return load_document(fixture_path(total_loss_db))


def load_fixture(total_loss_db: int) -> MeasurementSet:
    return measurement_from_document(fixture_document(total_loss_db))
