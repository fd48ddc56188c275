"""Deterministic CSV/JSON serialization and atomic output commits.

Matrix CSVs are row-major with a 1-based ``j1..jp`` header; momenta CSVs
group columns by coordinate (``x1..xd, y1..yd, z1..zd``).  Identical inputs
always produce byte-identical files: floats are written with shortest
round-trip ``repr`` and JSON keys are sorted.
"""

from __future__ import annotations

import io
import json
import os
from pathlib import Path

import numpy as np

from .covariance import StructuredCovariance
from .errors import ConfigError, DimensionError


def _format_value(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def csv_bytes(header: list, rows) -> bytes:
    """Serialize a table deterministically (no quoting, plain commas)."""
    buf = io.StringIO()
    buf.write(",".join(str(h) for h in header) + "\n")
    for row in rows:
        buf.write(",".join(_format_value(x) for x in row) + "\n")
    return buf.getvalue().encode()


def matrix_csv_bytes(m: np.ndarray) -> bytes:
    """Dense matrix as CSV with the ``j1..jp`` column header."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    header = [f"j{i + 1}" for i in range(m.shape[1])]
    return csv_bytes(header, m)


def read_matrix_csv(path) -> np.ndarray:
    """Read a matrix CSV written by :func:`matrix_csv_bytes`."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise DimensionError(f"{path}: row width does not match header")
    return data


def momenta_csv_bytes(m: np.ndarray) -> bytes:
    """Momenta matrix CSV with the coordinate-grouped header."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[1] % 3 != 0:
        raise DimensionError("momenta matrix must have 3d columns")
    d = m.shape[1] // 3
    header = [f"{axis}{i + 1}" for axis in ("x", "y", "z") for i in range(d)]
    return csv_bytes(header, m)


def read_momenta_csv(path) -> np.ndarray:
    """Read a coordinate-grouped momenta CSV, validating the column layout."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if len(header) % 3 != 0:
        raise DimensionError(f"{path}: column count must be divisible by 3")
    d = len(header) // 3
    expected = [f"{axis}{i + 1}" for axis in ("x", "y", "z") for i in range(d)]
    if header != expected:
        raise DimensionError(f"{path}: header does not follow the x/y/z group layout")
    if data.shape[1] != len(header):
        raise DimensionError(f"{path}: row width does not match header")
    return data


def jsonable(obj):
    """Recursively convert numpy containers; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if np.isfinite(value) else None
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n").encode()


def covariance_to_json(cov: StructuredCovariance) -> dict:
    """Structured covariance as its JSON document."""
    return {
        "kg": cov.kg,
        "kf": cov.kf,
        "t": cov.t,
        "sigma_gg": cov.sigma_gg.tolist(),
        "sigma_ff": cov.sigma_ff.tolist(),
        "sigma_gf": cov.sigma_gf.tolist(),
        "sigma_eps2": cov.sigma_eps2,
    }


def covariance_from_json(doc: dict) -> StructuredCovariance:
    """Parse the covariance JSON document, naming missing fields."""
    for key in ("kg", "kf", "t", "sigma_gg", "sigma_ff", "sigma_gf", "sigma_eps2"):
        if key not in doc:
            raise ConfigError("missing covariance entry", field=key)
    cov = StructuredCovariance(
        sigma_gg=np.asarray(doc["sigma_gg"], dtype=float),
        sigma_ff=np.asarray(doc["sigma_ff"], dtype=float),
        sigma_gf=np.asarray(doc["sigma_gf"], dtype=float),
        sigma_eps2=float(doc["sigma_eps2"]),
    )
    if (cov.kg, cov.kf, cov.t) != (int(doc["kg"]), int(doc["kf"]), int(doc["t"])):
        raise ConfigError("covariance arrays do not match the declared dimensions",
                          field="sigma_ff")
    return cov


def commit_outputs(out_dir, files: dict) -> list:
    """Write ``{relative name: bytes}`` under ``out_dir`` via temp-file renames.

    All content is materialized before the first byte is written, so a
    failing pipeline never leaves partial outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, payload in sorted(files.items()):
        target = out / name
        tmp = target.with_name(f".{target.name}.tmp-{os.getpid()}")
        tmp.write_bytes(payload)
        os.replace(tmp, target)
        written.append(target)
    return written
