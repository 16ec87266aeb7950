"""Generalized cross validation over a log grid with golden-section refinement."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InputError, SelectionError

GRID_POINTS = 40
GRID_SPAN = (1e-6, 1e2)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GcvResult:
    """Selected ``eta`` plus the grid curve (NaN marks skipped points)."""

    eta: float
    grid: np.ndarray
    values: np.ndarray
    grid_eta: float
    refined: bool

    def curve(self) -> list[dict]:
        return [
            {"eta": float(e), "gcv": None if not np.isfinite(v) else float(v)}
            for e, v in zip(self.grid, self.values)
        ]


def default_grid(K: np.ndarray, points: int = GRID_POINTS) -> np.ndarray:
    """Log-spaced grid spanning ``[1e-6, 1e2] * trace(K) / n``."""
    scale = float(np.trace(K)) / K.shape[0]
    if not scale > 0:
        scale = 1.0
    return np.logspace(np.log10(GRID_SPAN[0]), np.log10(GRID_SPAN[1]), points) * scale


def check_grid(grid) -> np.ndarray:
    g = np.atleast_1d(np.asarray(grid, dtype=float))
    if g.ndim != 1 or g.size == 0:
        raise InputError("eta grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise InputError("eta grid must be strictly positive")
    if g.size > 1 and np.any(np.diff(g) <= 0):
        raise InputError("eta grid must be sorted strictly ascending")
    return g


def select(score: Callable[[np.ndarray], np.ndarray], grid, refine: bool = True,
           iters: int = 40) -> GcvResult:
    """Minimize ``score`` over ``grid`` and polish inside the bracketing cell.

    ``score`` maps an array of ``eta`` to GCV values (NaN = not evaluable).
    Ties go to the smallest ``eta``.
    """
    grid = check_grid(grid)
    values = np.asarray(score(grid), dtype=float)
    ok = np.isfinite(values) & (values >= 0)
    if not ok.any():
        raise SelectionError("GCV could not be evaluated at any grid point (tr(B) >= n everywhere)")
    if not ok.all():
        warnings.warn(
            f"GCV skipped {int((~ok).sum())} grid point(s) with tr(B) >= n",
            RuntimeWarning, stacklevel=2,
        )
        values = np.where(ok, values, np.nan)
    k = int(np.nanargmin(values))
    best_eta, best_val = float(grid[k]), float(values[k])
    refined = False
    if refine and grid.size > 1:
        lo = math.log(grid[max(k - 1, 0)])
        hi = math.log(grid[min(k + 1, grid.size - 1)])
        f = lambda u: float(score(np.array([math.exp(u)]))[0])  # noqa: E731
        a, b = lo, hi
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(iters):
            if not (np.isfinite(fc) and np.isfinite(fd)):
                break
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - _GOLDEN * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + _GOLDEN * (b - a)
                fd = f(d)
        for u, fu in ((c, fc), (d, fd)):
            if np.isfinite(fu) and fu < best_val:
                best_eta, best_val, refined = math.exp(u), fu, True
    return GcvResult(eta=best_eta, grid=grid, values=values, grid_eta=float(grid[k]), refined=refined)
