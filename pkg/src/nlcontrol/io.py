"""Artifact writers, readers and schemas.

Every artifact carries a manifest (config hash, toolkit version, grid
parameters).  CSV files start with a ``# manifest: {json}`` comment line;
JSON files embed it under ``"manifest"``; binary files get a JSON sidecar
``<name>.json``.  Floats are written with ``repr`` so that identical runs
produce identical bytes.

Binary layout (little-endian)::

    int64 n_interior, int64 n_steps, float64 T, then float64 payload (row-major)

The payload shape is recorded in the sidecar (``shape`` and ``fields``).
"""
from __future__ import annotations

import csv
import json
import math
from importlib import metadata
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np

MANIFEST_PREFIX = "# manifest: "
HEADER_DTYPE = np.dtype([("n_interior", "<i8"), ("n_steps", "<i8"), ("T", "<f8")])


def toolkit_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def make_manifest(config_digest: str, n_interior: int, n_steps: int, T: float,
                  command: str, seed: int = 0) -> dict:
    return {
        "config_sha256": config_digest,
        "toolkit_version": toolkit_version(),
        "command": command,
        "seed": int(seed),
        "grid": {"n_interior": int(n_interior), "n_steps": int(n_steps), "T": float(T)},
    }


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], manifest: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(MANIFEST_PREFIX + json.dumps(manifest, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_table(path):
    """Return ``(manifest, header, rows)`` with rows as lists of strings."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(MANIFEST_PREFIX):
            raise ValueError(f"{path}: missing manifest line")
        manifest = json.loads(first[len(MANIFEST_PREFIX):])
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return manifest, header, rows


def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, payload: dict, manifest: dict) -> None:
    doc = {"manifest": manifest, **_clean(payload)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def append_jsonl(path, records: Iterable[dict], manifest: dict) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"manifest": manifest, **_clean(rec)}, sort_keys=True) + "\n")


def write_binary(path, payload: np.ndarray, n_interior: int, n_steps: int, T: float,
                 fields: Sequence[str], manifest: dict) -> None:
    payload = np.ascontiguousarray(payload, dtype="<f8")
    header = np.array([(n_interior, n_steps, T)], dtype=HEADER_DTYPE)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(payload.tobytes(order="C"))
    sidecar = {"layout": "int64 n_interior, int64 n_steps, float64 T, float64 payload row-major",
               "fields": list(fields), "shape": list(payload.shape)}
    write_json(str(path) + ".json", sidecar, manifest)


def read_binary(path):
    """Return ``(header dict, payload)``; the shape comes from the sidecar."""
    raw = Path(path).read_bytes()
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    data = np.frombuffer(raw[HEADER_DTYPE.itemsize:], dtype="<f8")
    with open(str(path) + ".json") as fh:
        shape = tuple(json.load(fh)["shape"])
    return ({"n_interior": int(header["n_interior"]), "n_steps": int(header["n_steps"]),
             "T": float(header["T"])}, data.reshape(shape))


def trajectory_rows(traj):
    """``(t, x, y, z)`` rows, time-major."""
    t, x = traj.time_grid.t, traj.grid.x
    for k in range(len(t)):
        for i in range(len(x)):
            yield t[k], x[i], traj.y[k, i], traj.z[k, i]


# ---------------------------------------------------------------- schemas

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["config_sha256", "toolkit_version", "command", "seed", "grid"],
    "properties": {
        "config_sha256": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "toolkit_version": {"type": "string"},
        "command": {"type": "string"},
        "seed": {"type": "integer"},
        "grid": {
            "type": "object",
            "required": ["n_interior", "n_steps", "T"],
            "properties": {"n_interior": {"type": "integer", "minimum": 1},
                           "n_steps": {"type": "integer", "minimum": 1},
                           "T": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}

_NUM = {"type": ["number", "null"]}
_BOOL = {"type": ["boolean", "null"]}


def _doc(required: dict, extra_required: Sequence[str] = ()) -> dict:
    props = {"manifest": MANIFEST_SCHEMA, **required}
    return {"type": "object", "required": ["manifest", *required.keys(), *extra_required],
            "properties": props}


HYPOTHESIS_SCHEMA = {
    "type": "object",
    "required": ["kbar", "h2_sup", "pass_h0", "pass_h2", "argmax_t"],
    "properties": {"kbar": _NUM, "h2_sup": _NUM, "pass_h0": _BOOL, "pass_h2": _BOOL,
                   "argmax_t": _NUM, "kbar_infinite": {"type": "boolean"},
                   "h2_sup_infinite": {"type": "boolean"}, "h2_threshold": _NUM},
}

JSON_SCHEMAS = {
    "check_report.json": _doc({
        "hypotheses": HYPOTHESIS_SCHEMA,
        "alpha_gap": {"type": "object", "required": ["passed", "margin"],
                      "properties": {"passed": {"type": "boolean"}, "margin": _NUM}},
        "kappa": {"type": "number"}, "s": {"type": "number"},
        "sigma_minus": {"type": "number"}, "sigma_plus": {"type": "number"},
        "passed": {"type": "boolean"},
    }),
    "control_summary.json": _doc({
        "epsilon": {"type": "number"}, "control_norm": {"type": "number"},
        "terminal_norms": {"type": "array", "items": {"type": "number"}, "minItems": 2,
                           "maxItems": 2},
        "j_value": {"type": "number"}, "cg_iterations": {"type": "integer"},
        "optimality_residual": {"type": "number"}, "converged": {"type": "boolean"},
        "empirical_C": {"type": "number"},
    }),
    "sweep_summary.json": _doc({
        "rows": {"type": "integer"}, "failures": {"type": "array"},
        "fitted_C": _NUM, "tail_ratio": _NUM, "max_halving_ratio": _NUM,
    }),
    "fixedpoint_summary.json": _doc({
        "iterations": {"type": "integer"}, "iteration_converged": {"type": "boolean"},
        "validation_passed": {"type": "boolean"}, "converged": {"type": "boolean"},
        "distances": {"type": "array", "items": _NUM},
        "radius_history": {"type": "array", "items": _NUM},
        "control_constant": _NUM,
    }),
    "boundary_report.json": _doc({
        "relative_error": {"type": "number"}, "terminal_norm_round_trip": {"type": "number"},
        "terminal_norm_extended": {"type": "number"}, "n_interior": {"type": "integer"},
    }),
    "simulate_summary.json": _doc({
        "terminal_norms": {"type": "array", "items": {"type": "number"}},
        "semilinear": {"type": "boolean"}, "control": {"type": "string"},
        "reference": {"type": "string"}, "reference_error": _NUM,
    }),
}

SIDECAR_SCHEMA = _doc({"layout": {"type": "string"},
                       "fields": {"type": "array", "items": {"type": "string"}},
                       "shape": {"type": "array", "items": {"type": "integer"}}})

JSONL_SCHEMAS = {
    "fixedpoint_log.jsonl": _doc({
        "iterate": {"type": "integer", "minimum": 1}, "distance": _NUM,
        "control_norm": _NUM, "radius": _NUM, "empirical_C": _NUM,
    }),
}

CSV_SCHEMAS = {
    "weights.csv": ("x", "t", "sigma", "alpha", "xi"),
    "trajectory.csv": ("t", "x", "y", "z"),
    "sweep.csv": ("epsilon", "control_norm", "terminal_norm_sq", "empirical_C", "cg_iterations"),
    "boundary_controls.csv": ("t", "h1", "h2"),
    "cg_history.csv": ("iteration", "relative_residual"),
}


def validate_csv(path, columns: Sequence[str]) -> list[str]:
    errors = []
    try:
        manifest, header, rows = read_table(path)
    except (ValueError, StopIteration) as exc:
        return [f"{path}: {exc}"]
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        errors.append(f"{path}: manifest: {exc.message}")
    if tuple(header) != tuple(columns):
        errors.append(f"{path}: header {header} != {list(columns)}")
    for k, row in enumerate(rows):
        if len(row) != len(columns):
            errors.append(f"{path}: row {k} has {len(row)} cells")
            break
        try:
            [float(v) for v in row]
        except ValueError:
            errors.append(f"{path}: row {k} is not numeric")
            break
    return errors


def _validate_json_doc(doc, schema, where) -> list[str]:
    validator = jsonschema.Draft202012Validator(schema)
    return [f"{where}: {'/'.join(map(str, e.path))}: {e.message}"
            for e in validator.iter_errors(doc)]


def validate_output_dir(directory) -> list[str]:
    """Validate every known artifact in ``directory``; returns a list of problems."""
    directory = Path(directory)
    errors = []
    for path in sorted(directory.iterdir()):
        name = path.name
        if name in CSV_SCHEMAS:
            errors += validate_csv(path, CSV_SCHEMAS[name])
        elif name in JSON_SCHEMAS or name.endswith(".bin.json"):
            schema = JSON_SCHEMAS.get(name, SIDECAR_SCHEMA)
            errors += _validate_json_doc(json.loads(path.read_text()), schema, name)
        elif name in JSONL_SCHEMAS:
            for k, line in enumerate(path.read_text().splitlines()):
                errors += _validate_json_doc(json.loads(line), JSONL_SCHEMAS[name],
                                             f"{name}:{k + 1}")
        elif name.endswith(".bin"):
            if not Path(str(path) + ".json").exists():
                errors.append(f"{name}: missing sidecar")
            else:
                try:
                    read_binary(path)
                except (ValueError, KeyError) as exc:
                    errors.append(f"{name}: {exc}")
        else:
            errors.append(f"{name}: unknown artifact")
    return errors


def write_schemas(directory: Optional[Path] = None) -> dict:
    """All artifact schemas as one mapping (optionally written to ``schemas.json``)."""
    out = {"json": JSON_SCHEMAS, "jsonl": JSONL_SCHEMAS, "binary_sidecar": SIDECAR_SCHEMA,
           "csv": {k: list(v) for k, v in CSV_SCHEMAS.items()}}
    if directory is not None:
        Path(directory, "schemas.json").write_text(json.dumps(out, indent=2, sort_keys=True))
    return out
