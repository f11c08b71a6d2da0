"""Serialisation of grids, fields, tables and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

from .geometry import FractionalParams, HemisphereGrid, ScalarField, build_hemisphere_grid


class ParseError(ValueError):
    """A field or config file could not be parsed."""


def grid_to_json(grid: HemisphereGrid) -> dict:
    return {"s": grid.params.s, "n_theta": grid.n_theta, "n_phi": grid.n_phi,
            "grading_gamma": grid.grading_gamma}


def grid_from_json(doc: dict) -> HemisphereGrid:
    return build_hemisphere_grid(int(doc["n_theta"]), int(doc["n_phi"]),
                                 FractionalParams(float(doc["s"])), doc.get("grading_gamma"))


def field_to_csv(field: ScalarField, header: str | None = None) -> str:
    buf = _io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    buf.write("theta_index,phi_index,value\n")
    vals = field.values
    for j in range(vals.shape[0]):
        for l in range(vals.shape[1]):
            buf.write(f"{j},{l},{float(vals[j, l])!r}\n")
    return buf.getvalue()


def field_from_csv(text: str, grid: HemisphereGrid) -> ScalarField:
    """Parse ``theta_index,phi_index,value`` rows; errors carry the 1-based line number."""
    vals = np.full(grid.shape, np.nan)
    seen_header = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_header:
            if line.replace(" ", "") != "theta_index,phi_index,value":
                raise ParseError(f"line {lineno}: expected header 'theta_index,phi_index,value'")
            seen_header = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 3 comma-separated fields, got {len(parts)}")
        try:
            j, l, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if not (0 <= j < grid.n_theta and 0 <= l < grid.n_phi):
            raise ParseError(f"line {lineno}: index ({j}, {l}) outside the grid {grid.shape}")
        if not np.isfinite(v):
            raise ParseError(f"line {lineno}: non-finite value")
        vals[j, l] = v
    if not seen_header:
        raise ParseError("line 1: missing header")
    if np.isnan(vals).any():
        j, l = np.argwhere(np.isnan(vals))[0]
        raise ParseError(f"missing value for node ({j}, {l})")
    return ScalarField(grid, vals)


def field_to_bytes(field: ScalarField) -> bytes:
    """Row-major float64 (theta outer, phi inner; shells outermost for volume fields)."""
    return np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def field_from_bytes(data: bytes, grid) -> ScalarField:
    n = int(np.prod(grid.shape))
    if len(data) != 8 * n:
        raise ParseError(f"expected {8 * n} bytes for grid {grid.shape}, got {len(data)}")
    return ScalarField(grid, np.frombuffer(data, dtype="<f8").reshape(grid.shape).copy())


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_table(path: Path, header: list[str], rows, meta: dict) -> None:
    """CSV with ``# key=value`` metadata lines before the column header."""
    with open(path, "w", newline="") as fh:
        for key in sorted(meta):
            fh.write(f"# {key}={meta[key]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")
