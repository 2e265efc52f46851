"""Density field files, iteration logs, run summaries and config files."""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError

CSV_COLUMNS = ("stage", "iter", "accepted", "F", "volume", "gP_inf", "delta", "theta", "pcg_iters", "time_ms")


def write_density_vtk(rho, shape, path, spacing=1.0, name="density"):
    """Legacy ASCII STRUCTURED_POINTS file with one cell scalar.

    ``shape`` is the cell count per axis; values are x-fastest. Values are
    written with 17 significant digits so they read back bit-exactly.
    """
    rho = np.asarray(rho, dtype=np.float64).ravel()
    nx, ny, nz = (int(s) for s in shape)
    if rho.size != nx * ny * nz:
        raise ValueError("density size does not match the grid shape")
    h = repr(float(spacing))
    lines = [
        "# vtk DataFile Version 3.0",
        "mrtopopt density field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}",
        "ORIGIN 0 0 0",
        f"SPACING {h} {h} {h}",
        f"CELL_DATA {rho.size}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        np.savetxt(fh, rho, fmt="%.17g")


def read_density_vtk(path):
    """Returns ``(rho, cell_shape, spacing)`` from a file written by :func:`write_density_vtk`."""
    with open(path) as fh:
        header = [fh.readline() for _ in range(10)]
        dims = spacing = None
        for line in header:
            parts = line.split()
            if parts and parts[0] == "DIMENSIONS":
                dims = tuple(int(p) - 1 for p in parts[1:4])
            elif parts and parts[0] == "SPACING":
                spacing = float(parts[1])
        if dims is None:
            raise ValueError("not a structured-points file")
        rho = np.loadtxt(fh, dtype=np.float64, ndmin=1)
    return rho, dims, spacing


def write_density_bin(rho, shape, path):
    """Three little-endian int64 dimensions followed by float64 values (x fastest)."""
    rho = np.asarray(rho, dtype="<f8").ravel()
    if rho.size != int(np.prod(shape)):
        raise ValueError("density size does not match the grid shape")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3q", *(int(s) for s in shape)))
        fh.write(rho.tobytes())


def read_density_bin(path):
    data = Path(path).read_bytes()
    shape = struct.unpack("<3q", data[:24])
    rho = np.frombuffer(data[24:], dtype="<f8")
    if rho.size != int(np.prod(shape)):
        raise ValueError("truncated density file")
    return rho.astype(np.float64), shape


def write_history_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in CSV_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_summary(report, path):
    Path(path).write_text(report.format())


def parse_config(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"config line {n}: empty key")
        out[key.replace("-", "_").lower()] = value
    return out


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)
