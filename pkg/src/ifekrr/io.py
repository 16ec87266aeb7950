"""Long-format panel CSV.

Header ``unit,time,y,x1,...,xd[,f1,...,fq]``; one row per (unit, time) cell.

* Units and times are kept as strings and sorted lexicographically.
* ``f`` columns hold observed common factors and must not vary across units
  at a given time. If one of them is constant it becomes the intercept
  (moved to the front and scaled to 1); otherwise an intercept is prepended.
* Numbers are written with ``repr``, the shortest decimal that round-trips
  to the same double, so write-then-read is bit-exact.
"""

from __future__ import annotations

import csv
import math
import re
from pathlib import Path

import numpy as np

from .errors import BalanceError, DuplicateCellError, InputError, ParseError
from .panel import PanelData

MAX_LISTED = 10


def _check_header(header: list[str], path) -> tuple[int, int]:
    h = [c.strip() for c in header]
    if h[:3] != ["unit", "time", "y"]:
        raise InputError(f"{path}: header must start with unit,time,y; got {','.join(h[:3])}")
    rest = h[3:]
    xs = [c for c in rest if re.fullmatch(r"x\d+", c)]
    fs = [c for c in rest if re.fullmatch(r"f\d+", c)]
    d, q = len(xs), len(fs)
    expected = [f"x{j}" for j in range(1, d + 1)] + [f"f{j}" for j in range(1, q + 1)]
    if d == 0 or rest != expected:
        raise InputError(
            f"{path}: columns after y must be x1..xd then optional f1..fq; got {','.join(rest)}"
        )
    return d, q


def _number(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"line {line}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"line {line}: column {column!r} is not finite: {text!r}")
    return v


def _factor_matrix(F: np.ndarray) -> np.ndarray:
    """Observed factors to ``F1`` with the intercept in column 0."""
    if F.shape[1] == 0:
        return np.ones((F.shape[0], 1))
    const = [j for j in range(F.shape[1]) if np.all(F[:, j] == F[0, j]) and F[0, j] != 0]
    if not const:
        return np.column_stack([np.ones(F.shape[0]), F])
    j = const[0]
    others = [k for k in range(F.shape[1]) if k != j]
    return np.column_stack([np.ones(F.shape[0]), F[:, others]])


def parse_panel_csv(path) -> PanelData:
    """Read and validate a balanced long-format panel."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        d, q = _check_header(header, path)
        cols = [c.strip() for c in header]
        width = len(cols)
        cells: dict[tuple[str, str], tuple[list[float], int]] = {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"line {line}: expected {width} fields, found {len(row)}")
            u, t = row[0].strip(), row[1].strip()
            if not u or not t:
                raise ParseError(f"line {line}: empty unit or time label")
            key = (u, t)
            if key in cells:
                raise DuplicateCellError(
                    f"line {line}: cell (unit={u}, time={t}) duplicates line {cells[key][1]}"
                )
            vals = [_number(row[k].strip(), line, cols[k]) for k in range(2, width)]
            cells[key] = (vals, line)
    if not cells:
        raise InputError(f"{path}: no data rows")

    units = sorted({u for u, _ in cells})
    times = sorted({t for _, t in cells})
    missing = [(u, t) for u in units for t in times if (u, t) not in cells]
    if missing:
        shown = ", ".join(f"(unit={u}, time={t})" for u, t in missing[:MAX_LISTED])
        more = f" and {len(missing) - MAX_LISTED} more" if len(missing) > MAX_LISTED else ""
        raise BalanceError(f"{path}: panel is unbalanced; missing {len(missing)} cell(s): {shown}{more}")

    N, T = len(units), len(times)
    data = np.array([[cells[(u, t)][0] for t in times] for u in units], dtype=float)
    Y = data[:, :, 0]
    X = data[:, :, 1:1 + d]
    F = data[:, :, 1 + d:]
    if q:
        varies = np.any(F != F[0:1], axis=(0, 2))
        if varies.any():
            t = times[int(np.argmax(varies))]
            raise InputError(f"{path}: factor columns differ across units at time {t}")
    F1 = _factor_matrix(F[0])
    return PanelData(Y=Y, X=X, F1=F1, unit_labels=tuple(units), time_labels=tuple(times))


def write_panel_csv(panel: PanelData, path) -> None:
    """Write ``panel`` so that :func:`parse_panel_csv` reads it back bit-exactly.

    Non-intercept columns of ``F1`` are written as ``f`` columns. The labels
    must sort lexicographically into panel order.
    """
    if list(panel.unit_labels) != sorted(panel.unit_labels) or \
            list(panel.time_labels) != sorted(panel.time_labels):
        raise InputError("unit and time labels must already be in lexicographic order")
    d, q = panel.d, panel.q1 - 1
    header = ["unit", "time", "y"] + [f"x{j}" for j in range(1, d + 1)] + \
             [f"f{j}" for j in range(1, q + 1)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, u in enumerate(panel.unit_labels):
            for t, tl in enumerate(panel.time_labels):
                row = [u, tl, repr(float(panel.Y[i, t]))]
                row += [repr(float(v)) for v in panel.X[i, t]]
                row += [repr(float(v)) for v in panel.F1[t, 1:]]
                w.writerow(row)
