"""Text file formats: fields, spectra, study tables and factor summaries.

Every file starts with one ``# {json}`` line holding metadata (tool
version, grid, configuration).  Floats are written with 17 significant
digits so a write/read round trip reproduces values exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import GridSpec, MultiField, cell_coordinates
from .models import CrossSpectrum

FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    """Malformed input file."""


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def metadata_line(kind: str, **meta) -> str:
    body = {"format": kind, "version": __version__}
    body.update(_jsonable(meta))
    return "# " + json.dumps(body, sort_keys=True) + "\n"


def read_metadata(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    try:
        return json.loads(first[1:])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad metadata line") from exc


def _data_lines(path):
    with open(path, newline="") as fh:
        return [ln for ln in fh if ln.strip() and not ln.startswith("#")]


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

def write_field(path, field: MultiField, restrict_obs: bool = True, **meta) -> None:
    """Write observed cells as ``component,x1..xd,value`` (1-based, canonical order).

    With ``restrict_obs=False`` every cell of the embedding lattice is
    written, which is how completed or imputed fields are exported.
    """
    sizes = field.grid.obs_sizes if restrict_obs else field.grid.emb_sizes
    d = len(sizes)
    coords = cell_coordinates(sizes)
    lines = [metadata_line("field", grid=list(sizes), p=field.p, **meta)]
    lines.append(",".join(["component"] + [f"x{i + 1}" for i in range(d)] + ["value"]) + "\n")
    for j in range(field.p):
        vals = field.values[j][tuple(slice(0, s) for s in sizes)].ravel(order="F")
        obs = (field.mask[j][tuple(slice(0, s) for s in sizes)].ravel(order="F")
               if restrict_obs else np.ones(coords.shape[0], dtype=bool))
        for c, v in zip(coords[obs], vals[obs]):
            lines.append(f"{j + 1}," + ",".join(str(int(x) + 1) for x in c) + "," + FLOAT_FMT % v + "\n")
    Path(path).write_text("".join(lines))


def read_field(path, grid=None) -> MultiField:
    """Read a field CSV.  Lattice sizes come from ``grid``, the metadata, or the largest coordinates."""
    meta = read_metadata(path)
    lines = _data_lines(path)
    if not lines:
        raise FormatError(f"{path}: empty field file")
    header = next(csv.reader([lines[0]]))
    d = len(header) - 2
    if d < 1 or header[0] != "component" or header[-1] != "value" or \
            header[1:-1] != [f"x{i + 1}" for i in range(d)]:
        raise FormatError(f"{path}: header must be component,x1,...,xd,value; got {header}")
    if len(lines) > 1:
        try:
            arr = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    else:
        arr = np.empty((0, d + 2))
    comp = arr[:, 0].astype(int) - 1
    idx = arr[:, 1:-1].astype(int) - 1
    if np.any(arr[:, :-1] != np.round(arr[:, :-1])):
        raise FormatError(f"{path}: component and coordinates must be integers")
    if comp.size and (comp.min() < 0 or idx.min() < 0):
        raise FormatError(f"{path}: indices are 1-based")
    if grid is None:
        grid = meta.get("grid")
    sizes = tuple(int(g) for g in grid) if grid is not None else tuple(int(v) + 1 for v in idx.max(axis=0))
    if len(sizes) != d:
        raise FormatError(f"{path}: grid {sizes} has wrong dimension for {d} coordinates")
    p = int(meta.get("p", comp.max() + 1 if comp.size else 0))
    if comp.size and comp.max() >= p:
        raise FormatError(f"{path}: component index exceeds p={p}")
    if np.any(idx >= np.array(sizes)):
        raise FormatError(f"{path}: coordinate outside grid {sizes}")
    values = np.zeros((p,) + sizes)
    mask = np.zeros((p,) + sizes, dtype=bool)
    key = (comp,) + tuple(idx.T)
    if len(set(zip(comp, *idx.T))) != comp.size:
        raise FormatError(f"{path}: duplicate cells")
    values[key] = arr[:, -1]
    mask[key] = True
    return MultiField(GridSpec(sizes, sizes, 1.0), values, mask)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def _upper(p):
    return [(j, k) for j in range(p) for k in range(j, p)]


def write_spectrum(path, f: CrossSpectrum, **meta) -> None:
    """One row per frequency (canonical order): 1-based index vector, then re/im of the upper triangle."""
    p, sizes = f.p, f.sizes
    coords = cell_coordinates(sizes)
    pairs = _upper(p)
    cols = [f"i{a + 1}" for a in range(len(sizes))]
    for j, k in pairs:
        cols += [f"re_{j + 1}_{k + 1}", f"im_{j + 1}_{k + 1}"]
    flat = np.stack([f.mats[..., j, k].ravel(order="F") for j, k in pairs], axis=1)
    lines = [metadata_line("spectrum", grid=list(sizes), p=p, **meta), ",".join(cols) + "\n"]
    for c, row in zip(coords, flat):
        parts = [str(int(x) + 1) for x in c]
        for z in row:
            parts += [FLOAT_FMT % z.real, FLOAT_FMT % z.imag]
        lines.append(",".join(parts) + "\n")
    Path(path).write_text("".join(lines))


def read_spectrum(path) -> tuple[CrossSpectrum, dict]:
    meta = read_metadata(path)
    if meta.get("format") != "spectrum":
        raise FormatError(f"{path}: not a spectrum file")
    sizes, p = tuple(meta["grid"]), int(meta["p"])
    d = len(sizes)
    lines = _data_lines(path)
    arr = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    pairs = _upper(p)
    if arr.shape != (int(np.prod(sizes)), d + 2 * len(pairs)):
        raise FormatError(f"{path}: expected {np.prod(sizes)} rows of {d + 2 * len(pairs)} columns, got {arr.shape}")
    idx = arr[:, :d].astype(int) - 1
    mats = np.zeros(sizes + (p, p), dtype=complex)
    key = tuple(idx.T)
    for n, (j, k) in enumerate(pairs):
        z = arr[:, d + 2 * n] + 1j * arr[:, d + 2 * n + 1]
        mats[key + (j, k)] = z
        if j != k:
            mats[key + (k, j)] = np.conj(z)
    return CrossSpectrum(mats), meta


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

STUDY_COLUMNS = ["replicate", "p", "method", "tau", "bandwidth", "checkpoint", "spectral_norm", "seconds"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def write_study(path, rows, **meta) -> None:
    lines = [metadata_line("study", **meta), ",".join(STUDY_COLUMNS) + "\n"]
    for r in rows:
        rec = asdict(r) if is_dataclass(r) else dict(r)
        lines.append(",".join(_cell(rec[c]) for c in STUDY_COLUMNS) + "\n")
    Path(path).write_text("".join(lines))


def read_study(path) -> list[dict]:
    out = []
    for rec in csv.DictReader(_data_lines(path)):
        if list(rec) != STUDY_COLUMNS:
            raise FormatError(f"{path}: columns {list(rec)} != {STUDY_COLUMNS}")
        out.append(dict(
            replicate=int(rec["replicate"]), p=int(rec["p"]), method=rec["method"],
            tau=float(rec["tau"]) if rec["tau"] else None,
            bandwidth=float(rec["bandwidth"]) if rec["bandwidth"] else None,
            checkpoint=int(rec["checkpoint"]) if rec["checkpoint"] else None,
            spectral_norm=float(rec["spectral_norm"]), seconds=float(rec["seconds"])))
    return out


def factor_table(models, names=None) -> tuple[list[str], list[list]]:
    """Loadings per component, one column per (J, factor), and a final percent-explained row."""
    p = models[0].loadings.shape[1]
    names = names or [str(k + 1) for k in range(p)]
    header = ["component"] + [f"J{m.J}_A{j + 1}" for m in models for j in range(m.J)]
    rows = [[names[k]] + [float(m.loadings[j, k]) for m in models for j in range(m.J)] for k in range(p)]
    rows.append(["percent_explained"] + [100.0 * m.explained_fraction for m in models for _ in range(m.J)])
    return header, rows


def write_factor_table(path, models, names=None, **meta) -> None:
    header, rows = factor_table(models, names)
    lines = [metadata_line("factor_table", **meta), ",".join(header) + "\n"]
    lines += [",".join([r[0]] + [FLOAT_FMT % v for v in r[1:]]) + "\n" for r in rows]
    Path(path).write_text("".join(lines))


def format_factor_table(models, names=None) -> str:
    """Fixed-width rendering for the terminal (3 decimals, percent with 1)."""
    header, rows = factor_table(models, names)
    out = ["".join(f"{h:>18}" for h in header)]
    for r in rows[:-1]:
        out.append(f"{r[0]:>18}" + "".join(f"{v:>18.3f}" for v in r[1:]))
    out.append(f"{rows[-1][0]:>18}" + "".join(f"{v:>17.1f}%" for v in rows[-1][1:]))
    return "\n".join(out)


def write_array_field(path, arr: np.ndarray, **meta) -> None:
    """Single real field on a lattice as ``x1..xd,value`` rows (all cells, canonical order)."""
    arr = np.asarray(arr, dtype=float)
    coords = cell_coordinates(arr.shape)
    d = arr.ndim
    lines = [metadata_line("array_field", grid=list(arr.shape), **meta),
             ",".join(f"x{i + 1}" for i in range(d)) + ",value\n"]
    for c, v in zip(coords, arr.ravel(order="F")):
        lines.append(",".join(str(int(x) + 1) for x in c) + "," + FLOAT_FMT % v + "\n")
    Path(path).write_text("".join(lines))


def read_array_field(path) -> np.ndarray:
    meta = read_metadata(path)
    sizes = tuple(meta["grid"])
    arr = np.loadtxt(_data_lines(path)[1:], delimiter=",", ndmin=2)
    out = np.zeros(sizes)
    out[tuple(arr[:, :-1].astype(int).T - 1)] = arr[:, -1]
    return out
