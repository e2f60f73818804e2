"""Deterministic writers for CSV tables, JSON summaries and raw f64 arrays."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path: str | Path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> Path:
    """Write rows with ``repr`` float formatting (round-trips exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    return path


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _parse(v: str):
    try:
        return float(v)
    except ValueError:
        return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return _fmt(v)
        return v
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(obj))
    return path


def write_f64(path: str | Path, array: np.ndarray, meta: dict | None = None) -> list[Path]:
    """Raw little-endian f64 array plus a JSON sidecar ``<path>.json``.

    Complex arrays are stored as interleaved real/imaginary pairs with a
    trailing axis of length 2 recorded in the sidecar.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a = np.asarray(array)
    is_complex = np.iscomplexobj(a)
    if is_complex:
        a = np.stack([a.real, a.imag], axis=-1)
    data = np.ascontiguousarray(a, dtype="<f8")
    path.write_bytes(data.tobytes())
    side = {"dtype": "float64", "byteorder": "little", "shape": list(data.shape),
            "complex_last_axis": bool(is_complex)}
    if meta:
        side.update(meta)
    sidecar = write_json(path.with_name(path.name + ".json"), side)
    return [path, sidecar]


def read_f64(path: str | Path) -> np.ndarray:
    path = Path(path)
    side = json.loads(path.with_name(path.name + ".json").read_text())
    a = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(side["shape"])
    if side.get("complex_last_axis"):
        a = a[..., 0] + 1j * a[..., 1]
    return a


def digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_list(paths: Iterable[str | Path], root: str | Path) -> list[dict]:
    root = Path(root)
    out = []
    for p in sorted({Path(p) for p in paths}):
        out.append({"path": str(p.relative_to(root)) if p.is_relative_to(root) else str(p),
                    "sha256": digest(p)})
    return out
