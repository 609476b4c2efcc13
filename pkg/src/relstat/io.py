"""Reading and writing two-column ``t,y`` series."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .gp import Dataset

__all__ = ["CsvError", "load_csv", "save_csv"]


class CsvError(ValueError):
    """Malformed series file."""


def _number(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path) -> Dataset:
    """Load a series from a comma-separated file with columns ``t, y``.

    A single non-numeric header row is skipped.  Rows are sorted by ``t``;
    repeated ``t`` values are an error.  The dataset id is the file stem.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    t, y, lines = [], [], []
    for lineno, row in enumerate(rows, start=1):
        cells = [c.strip() for c in row]
        if not any(cells):
            continue
        if len(cells) != 2:
            raise CsvError(f"{path}: row {lineno} has {len(cells)} columns, expected 2")
        a, b = _number(cells[0]), _number(cells[1])
        if not t and not lines and a is None and b is None:
            lines.append(lineno)  # header
            continue
        if a is None or b is None:
            bad = cells[0] if a is None else cells[1]
            raise CsvError(f"{path}: row {lineno}: non-numeric value {bad!r}")
        if not (np.isfinite(a) and np.isfinite(b)):
            raise CsvError(f"{path}: row {lineno}: non-finite value")
        t.append(a)
        y.append(b)
        lines.append(lineno)
    if not t:
        raise CsvError(f"{path}: no data rows")
    t = np.array(t)
    ts = np.sort(t)
    dup = np.flatnonzero(np.diff(ts) == 0)
    if dup.size:
        raise CsvError(f"{path}: duplicate t value {ts[dup[0]]!r}")
    return Dataset(path.stem, t, np.array(y))


def save_csv(dataset: Dataset, path) -> Path:
    """Write ``dataset`` with a ``t,y`` header; floats keep full precision."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"])
        for a, b in zip(dataset.t, dataset.y):
            w.writerow([repr(float(a)), repr(float(b))])
    return path
