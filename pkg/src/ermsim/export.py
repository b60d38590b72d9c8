"""CSV and JSON writers with stable column and key order."""
from __future__ import annotations

import csv
import enum
import json
import math
from pathlib import Path

import numpy as np


def to_plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, dict):
        return {str(k): to_plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_plain(v.tolist())
    if isinstance(v, np.generic):
        return to_plain(v.item())
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def write_json(path, obj) -> Path:
    """Write ``obj`` as sorted-key JSON; non-finite floats become null."""
    path = Path(path)
    path.write_text(json.dumps(to_plain(obj), sort_keys=True, indent=2) + "\n")
    return path


def _cell(v):
    v = to_plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, columns=None) -> Path:
    """Write an iterable of dicts with a header row; ``columns`` fixes the order."""
    path = Path(path)
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return path


def read_csv(path):
    """Read a file written by :func:`write_csv` into a list of string dicts."""
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
