"""Artifact output: raw little-endian arrays with JSON sidecars, CSV tables, canonical JSON."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def canonical_json(obj) -> str:
    """Sorted keys, fixed indentation, repr-exact floats; identical objects give identical bytes."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_plain(obj.real), _plain(obj.imag)]
    return obj


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(canonical_json(obj))
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: Path) -> tuple:
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def write_field(path: Path, array: np.ndarray, meta: dict) -> Path:
    """``<path>.bin`` holds the C-ordered little-endian values; ``<path>.json`` the shape, dtype and ``meta``."""
    path = Path(path)
    arr = np.ascontiguousarray(array)
    dtype = "<c16" if np.iscomplexobj(arr) else "<f8"
    arr.astype(dtype).tofile(path.with_suffix(".bin"))
    write_json(path.with_suffix(".json"), {"shape": list(arr.shape), "dtype": dtype, "meta": meta})
    return path.with_suffix(".bin")


def read_field(path: Path) -> tuple:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    arr = np.fromfile(path.with_suffix(".bin"), dtype=side["dtype"]).reshape(side["shape"])
    return arr, side["meta"]
