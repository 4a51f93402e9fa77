"""CSV snapshots with JSON sidecar headers (full double precision)."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import PhaseGrid2

FMT = "%.16e"  # 17 significant digits


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_table(path, columns: dict):
    """Write equal-length 1-D columns as CSV."""
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt=FMT)
    return path


def read_table(path) -> dict:
    path = Path(path)
    names = path.read_text().splitlines()[0].split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


def write_grid(path, grid: PhaseGrid2, header=None):
    """Grid as long-format CSV (p2, q2, value) plus ``<stem>.json`` with geometry and metadata."""
    path = Path(path)
    P, Q = grid.mesh()
    write_table(path, {"p2": P.ravel(), "q2": Q.ravel(), "value": grid.values.ravel()})
    meta = {"n_p": grid.n_p, "n_q": grid.n_q, "p_nodes": "staggered (i+1/2)/n_p",
            "q_nodes": "2 pi i / n_q", "meta": grid.meta, **(header or {})}
    write_json(path.with_suffix(".json"), meta)
    return path


def read_grid(path) -> PhaseGrid2:
    path = Path(path)
    head = json.loads(path.with_suffix(".json").read_text())
    vals = read_table(path)["value"].reshape(head["n_p"], head["n_q"])
    return PhaseGrid2(vals, head.get("meta", {}))


def write_ensemble(path, ens, header=None):
    """Ensemble points (amplitudes and chart coordinates) with weights."""
    path = Path(path)
    p, q = ens.points
    cols = {}
    for k in range(ens.M):
        cols[f"re_x{k}"] = ens.x[:, k].real
        cols[f"im_x{k}"] = ens.x[:, k].imag
    for k in range(ens.M):
        cols[f"p{k}"] = p[:, k]
    for k in range(ens.M):
        cols[f"q{k}"] = q[:, k]
    cols["weight"] = ens.weights
    write_table(path, cols)
    write_json(path.with_suffix(".json"), {"M": ens.M, "count": len(ens.weights), "time": ens.time,
                                            **(header or {})})
    return path
