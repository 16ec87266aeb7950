"""Unit-by-unit kernel ridge regression for heterogeneous ``g_i``.

For unit ``i`` with Gram matrix ``K`` over ``X_i1..X_iT`` and ``M = I - P_Z``::

    a    = (M K + T*eta*I)^{-1} M Y_i
    beta = (Z'Z)^{-1} Z' (Y_i - K a)
    g_i(x) = a' K_x
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gcv as _gcv
from .errors import InputError
from .kernels import (
    GramEigen,
    KernelSpec,
    cross_gram,
    effective_dim,
    eigendecompose,
    gram,
    is_resolved,
    resolve_bandwidths,
)
from .panel import PanelData, build_Z, check_full_rank, ols, projection_P
from .profiled import ProfiledKRR


@dataclass(frozen=True)
class HeteroUnitFit:
    unit: int
    a: np.ndarray
    beta: np.ndarray
    eta: float
    h_hat: float
    sigma_eps_sq: float
    fitted: np.ndarray
    gram_eigen: GramEigen
    spec: KernelSpec
    points: np.ndarray
    Z: np.ndarray
    cond_Z: float
    gcv: _gcv.GcvResult | None = None
    notes: tuple = field(default=())

    @property
    def gram(self) -> np.ndarray:
        return self.gram_eigen.gram

    @property
    def g_fitted(self) -> np.ndarray:
        """``g_i`` at the unit's own design points."""
        return self.gram @ self.a


def _unit_setup(panel: PanelData, i: int, spec: KernelSpec):
    if not 0 <= i < panel.N:
        raise InputError(f"unit index {i} out of range for N={panel.N}")
    if not is_resolved(spec):
        spec = resolve_bandwidths(spec, panel.stacked_points())
    Z = build_Z(panel)
    cond = check_full_rank(Z)
    P = projection_P(Z)
    pts = panel.X[i]
    K = gram(spec, pts)
    return spec, Z, cond, P, pts, K


def _check_eta(eta) -> float:
    eta = float(eta)
    if not np.isfinite(eta) or eta <= 0:
        raise InputError(f"eta must be a positive real, got {eta!r}")
    return eta


def _finish(panel, i, spec, Z, cond, P, pts, K, eta, engine, gres=None) -> HeteroUnitFit:
    y = panel.Y[i]
    a, notes = engine.solve(y, eta)
    beta = ols(Z, y - K @ a)
    fitted = K @ a + Z @ beta
    ge = eigendecompose(K, panel.T)
    resid = y - fitted
    return HeteroUnitFit(
        unit=i, a=a, beta=beta, eta=eta, h_hat=effective_dim(ge, eta),
        sigma_eps_sq=float(resid @ resid / panel.T), fitted=fitted, gram_eigen=ge,
        spec=spec, points=pts, Z=Z, cond_Z=cond, gcv=gres, notes=notes,
    )


def fit_hetero_unit(panel: PanelData, i: int, spec: KernelSpec, eta: float) -> HeteroUnitFit:
    """Fit unit ``i`` at a fixed regularization ``eta``."""
    eta = _check_eta(eta)
    spec, Z, cond, P, pts, K = _unit_setup(panel, i, spec)
    engine = ProfiledKRR(K, P, 1, panel.n_z)
    return _finish(panel, i, spec, Z, cond, P, pts, K, eta, engine)


def gcv_hetero(panel: PanelData, i: int, spec: KernelSpec, eta_grid=None, refine: bool = True,
               grid_points: int = _gcv.GRID_POINTS):
    """GCV choice of ``eta`` for unit ``i``; returns ``(eta_hat, GcvResult)``."""
    spec, Z, cond, P, pts, K = _unit_setup(panel, i, spec)
    engine = ProfiledKRR(K, P, 1, panel.n_z)
    grid = _gcv.default_grid(K, grid_points) if eta_grid is None else eta_grid
    res = _gcv.select(lambda e: engine.gcv(panel.Y[i], e)[0], grid, refine=refine)
    return res.eta, res


def fit_hetero_unit_gcv(panel: PanelData, i: int, spec: KernelSpec, eta_grid=None,
                        refine: bool = True, eta_scale: float = 1.0,
                        grid_points: int = _gcv.GRID_POINTS) -> HeteroUnitFit:
    """Select ``eta`` by GCV and fit unit ``i`` with ``eta_scale * eta_hat``."""
    eta_scale = _check_eta(eta_scale)
    spec, Z, cond, P, pts, K = _unit_setup(panel, i, spec)
    engine = ProfiledKRR(K, P, 1, panel.n_z)
    grid = _gcv.default_grid(K, grid_points) if eta_grid is None else eta_grid
    res = _gcv.select(lambda e: engine.gcv(panel.Y[i], e)[0], grid, refine=refine)
    return _finish(panel, i, spec, Z, cond, P, pts, K, res.eta * eta_scale, engine, res)


def fit_hetero(panel: PanelData, spec: KernelSpec, eta="gcv", eta_grid=None,
               threads: int = 1, eta_scale: float = 1.0, refine: bool = True,
               grid_points: int = _gcv.GRID_POINTS) -> list[HeteroUnitFit]:
    """Fit every unit; ``eta`` is a positive real, a per-unit sequence, or ``"gcv"``."""
    if not is_resolved(spec):
        spec = resolve_bandwidths(spec, panel.stacked_points())
    if isinstance(eta, str):
        if eta != "gcv":
            raise InputError(f"eta must be a positive real or 'gcv', got {eta!r}")
        job = lambda i: fit_hetero_unit_gcv(  # noqa: E731
            panel, i, spec, eta_grid, refine, eta_scale, grid_points)
    else:
        etas = np.broadcast_to(np.asarray(eta, dtype=float), (panel.N,))
        job = lambda i: fit_hetero_unit(panel, i, spec, etas[i])  # noqa: E731
    if threads <= 1:
        return [job(i) for i in range(panel.N)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, range(panel.N)))


def predict_hetero(fit: HeteroUnitFit, panel: PanelData | None, x):
    """``g_i(x)`` for one ``d``-vector (float) or an ``(m, d)`` array of points."""
    x = np.asarray(x, dtype=float)
    d = fit.points.shape[1]
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    if pts.shape[1] != d:
        raise InputError(f"dimension mismatch: model has d={d}, got {pts.shape[1]}")
    vals = cross_gram(fit.spec, fit.points, pts).T @ fit.a
    return float(vals[0]) if single else vals


def smoother_matrix_hetero(panel: PanelData, i: int, spec: KernelSpec, eta: float) -> np.ndarray:
    """Hat matrix ``B_eta`` with fitted values ``B_eta @ Y_i``.

    Built from the nonsymmetric system as printed:
    ``B = K S + P_Z (I - K S)``, ``S = (M K + T eta I)^{-1} M``.
    """
    eta = _check_eta(eta)
    spec, Z, cond, P, pts, K = _unit_setup(panel, i, spec)
    T = panel.T
    S = np.linalg.solve(P @ K + T * eta * np.eye(T), P)
    KS = K @ S
    H = np.eye(T) - P
    return KS + H @ (np.eye(T) - KS)


def sigma_eps_hetero(fit: HeteroUnitFit, panel: PanelData) -> float:
    """Mean squared residual ``||Y_i - g_i(X_i) - Z beta_i||^2 / T``."""
    r = panel.Y[fit.unit] - fit.fitted
    return float(r @ r / panel.T)


def objective_hetero(K, Z, y, a, beta, eta) -> float:
    r = y - K @ a - Z @ beta
    return float(r @ r / (2 * len(y)) + 0.5 * eta * a @ K @ a)
