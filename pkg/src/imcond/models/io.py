"""CSV readers for observed data, one observation per row with a header.

=========== ==========================================
model       columns
=========== ==========================================
t, gamma2   ``x``
nile        ``x1,x2`` (one value from each sample)
bvn         ``x1,x2`` (raw pairs)
vc          ``group,y``
normal-mean ``x1,x2`` (a single row)
=========== ==========================================

Lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import csv

import numpy as np

from imcond.errors import DomainError

__all__ = ["read_columns", "load_data"]

SCHEMAS = {
    "t": ("x",),
    "gamma2": ("x",),
    "nile": ("x1", "x2"),
    "bvn": ("x1", "x2"),
    "normal-mean": ("x1", "x2"),
    "vc": ("group", "y"),
}


def read_columns(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    missing = [c for c in columns if c not in (reader.fieldnames or [])]
    if missing:
        raise DomainError(f"{path}: missing column(s) {', '.join(missing)}")
    out = {c: [] for c in columns}
    for i, row in enumerate(reader, start=2):
        for c in columns:
            out[c].append(row[c].strip())
    if not out[columns[0]]:
        raise DomainError(f"{path}: no data rows")
    return out


def _floats(values, path, name):
    try:
        arr = np.array([float(v) for v in values])
    except ValueError as exc:
        raise DomainError(f"{path}: column {name!r} is not numeric ({exc})") from None
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{path}: column {name!r} has non-finite values")
    return arr


def load_data(model: str, path):
    """Parsed data for ``model``: an array, a pair of arrays, or
    ``(groups, y)`` for the variance-components model."""
    cols = SCHEMAS.get(model)
    if cols is None:
        raise DomainError(f"no data schema for model {model!r}")
    raw = read_columns(path, cols)
    if model in ("t", "gamma2"):
        return _floats(raw["x"], path, "x")
    if model == "vc":
        return np.array(raw["group"]), _floats(raw["y"], path, "y")
    x1, x2 = _floats(raw["x1"], path, "x1"), _floats(raw["x2"], path, "x2")
    if model == "bvn":
        return np.column_stack([x1, x2])
    if model == "normal-mean":
        if x1.size != 1:
            raise DomainError(f"{path}: the normal-mean model takes exactly one row")
        return float(x1[0]), float(x2[0])
    return x1, x2
