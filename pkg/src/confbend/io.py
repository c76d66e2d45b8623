"""NFLD1 field files and JSON reports.

NFLD1 layout: one ASCII header line

    NFLD1 n=<n> sizes=<s1,...,sn> comps=<c> dtype=f64le

optionally followed by `` periods=<L1,...,Ln>``, then a newline and the raw
little-endian float64 payload in C order with components fastest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import TWO_PI, Grid

MAGIC = "NFLD1"


class FieldFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RawField:
    grid: Grid
    values: np.ndarray  # grid.shape + (comps,) or grid.shape when comps == 1
    comps: int


def _header(grid: Grid, comps: int) -> str:
    sizes = ",".join(str(s) for s in grid.sizes)
    line = f"{MAGIC} n={grid.n} sizes={sizes} comps={comps} dtype=f64le"
    if any(not math.isclose(p, TWO_PI) for p in grid.periods):
        line += " periods=" + ",".join(repr(p) for p in grid.periods)
    return line + "\n"


def write_field(path, grid: Grid, values) -> Path:
    """Write a scalar (grid.shape) or multi-component (grid.shape + (c,)) array atomically."""
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        comps = 1
    elif values.shape[:-1] == grid.shape:
        comps = values.shape[-1]
    else:
        raise FieldFormatError(f"array shape {values.shape} does not match grid {grid.shape}")
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(_header(grid, comps).encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    os.replace(tmp, path)
    return path


def _parse_header(line: str):
    parts = line.split()
    if not parts or parts[0] != MAGIC:
        raise FieldFormatError("not an NFLD1 file")
    kv = {}
    for p in parts[1:]:
        if "=" not in p:
            raise FieldFormatError(f"bad header token {p!r}")
        k, v = p.split("=", 1)
        kv[k] = v
    try:
        n = int(kv["n"])
        sizes = tuple(int(s) for s in kv["sizes"].split(","))
        comps = int(kv["comps"])
        dtype = kv["dtype"]
    except (KeyError, ValueError) as exc:
        raise FieldFormatError(f"incomplete NFLD1 header: {line.strip()!r}") from exc
    if dtype != "f64le":
        raise FieldFormatError(f"unsupported dtype {dtype}")
    if len(sizes) != n or comps < 1:
        raise FieldFormatError("header sizes/comps are inconsistent")
    periods = tuple(float(p) for p in kv["periods"].split(",")) if "periods" in kv else ()
    return n, sizes, comps, periods


def read_field(path) -> RawField:
    with open(path, "rb") as fh:
        line = fh.readline(4096).decode("ascii", errors="replace")
        n, sizes, comps, periods = _parse_header(line)
        payload = fh.read()
    grid = Grid(sizes, periods)
    count = grid.npoints * comps
    if len(payload) != 8 * count:
        raise FieldFormatError(f"payload has {len(payload)} bytes, expected {8 * count}")
    arr = np.frombuffer(payload, dtype="<f8").astype(float)
    arr = arr.reshape(grid.shape if comps == 1 else grid.shape + (comps,))
    return RawField(grid, arr, comps)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def to_json_text(report: dict) -> str:
    return json.dumps(report, indent=2, default=_default, allow_nan=True)


def write_report(path, report: dict) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(to_json_text(report) + "\n")
    os.replace(tmp, path)
    return path
