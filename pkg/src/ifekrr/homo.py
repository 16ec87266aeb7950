"""Profile least squares for a common ``g`` across units.

Stacking all ``n = N*T`` observations in unit-major order::

    a      = (P_N K + n*eta*I)^{-1} P_N Y
    beta_i = (Z'Z)^{-1} Z' (Y_i - tau_i g)
    g(x)   = a' K_x
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gcv as _gcv
from .errors import InputError, ResourceError
from .kernels import (
    GramEigen,
    KernelSpec,
    cross_gram,
    effective_dim,
    gram,
    is_resolved,
    resolve_bandwidths,
)
from .panel import PanelData, build_Z, check_full_rank, ols, projection_P
from .profiled import ProfiledKRR, apply_blocks

DEFAULT_NT_CAP = 6000

__all__ = [
    "HomoFit", "projection_P", "fit_homo", "fit_homo_gcv", "gcv_homo",
    "predict_homo", "smoother_matrix_homo", "sigma_eps_homo",
]


@dataclass(frozen=True)
class HomoFit:
    """Fitted homogeneous model.

    ``gram_eigen`` analyses the profiled Gram ``P_N K P_N / n``: its spectrum
    is the empirical version of the factor-adjusted inner product and feeds
    the interval machinery.
    """

    a: np.ndarray
    eta: float
    P: np.ndarray
    betas: np.ndarray
    sigma_eps_sq: float
    gram_eigen: GramEigen
    spec: KernelSpec
    K: np.ndarray
    points: np.ndarray
    Z: np.ndarray
    N: int
    T: int
    h_hat: float
    cond_Z: float
    gcv: _gcv.GcvResult | None = None
    notes: tuple = field(default=())

    @property
    def g_fitted(self) -> np.ndarray:
        """``g`` at all ``N*T`` design points, unit-major."""
        return self.K @ self.a

    @property
    def fitted(self) -> np.ndarray:
        """Fitted responses ``g(X_it) + Z_t' beta_i`` as an ``(N, T)`` array."""
        return self.g_fitted.reshape(self.N, self.T) + self.betas @ self.Z.T


def _check_cap(panel: PanelData, cap: int) -> None:
    n = panel.N * panel.T
    if n > cap:
        raise ResourceError(
            f"N*T = {n} exceeds the dense-solve cap of {cap}; subsample units or raise the cap"
        )


def _setup(panel: PanelData, spec: KernelSpec, cap: int):
    _check_cap(panel, cap)
    pts = panel.stacked_points()
    if not is_resolved(spec):
        spec = resolve_bandwidths(spec, pts)
    Z = build_Z(panel)
    cond = check_full_rank(Z)
    P = projection_P(Z)
    K = gram(spec, pts)
    return spec, Z, cond, P, pts, K


def _check_eta(eta) -> float:
    eta = float(eta)
    if not np.isfinite(eta) or eta <= 0:
        raise InputError(f"eta must be a positive real, got {eta!r}")
    return eta


def _finish(panel, spec, Z, cond, P, pts, K, engine, eta, gres=None) -> HomoFit:
    y = panel.Y.reshape(-1)
    a, notes = engine.solve(y, eta)
    g = (K @ a).reshape(panel.N, panel.T)
    R = panel.Y - g
    betas = ols(Z, R.T).T
    ge = engine.gram_eigen()
    return HomoFit(
        a=a, eta=eta, P=P, betas=betas,
        sigma_eps_sq=_sigma(R, P, panel.N, panel.T, panel.n_z),
        gram_eigen=ge, spec=spec, K=K, points=pts, Z=Z, N=panel.N, T=panel.T,
        h_hat=effective_dim(ge, eta), cond_Z=cond, gcv=gres, notes=notes,
    )


def fit_homo(panel: PanelData, spec: KernelSpec, eta: float, cap: int = DEFAULT_NT_CAP) -> HomoFit:
    eta = _check_eta(eta)
    spec, Z, cond, P, pts, K = _setup(panel, spec, cap)
    engine = ProfiledKRR(K, P, panel.N, panel.n_z)
    return _finish(panel, spec, Z, cond, P, pts, K, engine, eta)


def fit_homo_gcv(panel: PanelData, spec: KernelSpec, eta_grid=None, refine: bool = True,
                 cap: int = DEFAULT_NT_CAP, eta_scale: float = 1.0,
                 grid_points: int = _gcv.GRID_POINTS) -> HomoFit:
    """Select ``eta`` by GCV over the pooled panel and fit with ``eta_scale * eta_hat``.

    ``eta_scale < 1`` undersmooths, which shrinks the bias relative to the
    interval width.
    """
    eta_scale = _check_eta(eta_scale)
    spec, Z, cond, P, pts, K = _setup(panel, spec, cap)
    engine = ProfiledKRR(K, P, panel.N, panel.n_z)
    grid = _gcv.default_grid(K, grid_points) if eta_grid is None else eta_grid
    y = panel.Y.reshape(-1)
    res = _gcv.select(lambda e: engine.gcv(y, e)[0], grid, refine=refine)
    return _finish(panel, spec, Z, cond, P, pts, K, engine, res.eta * eta_scale, res)


def gcv_homo(panel: PanelData, spec: KernelSpec, eta_grid=None, refine: bool = True,
             cap: int = DEFAULT_NT_CAP, grid_points: int = _gcv.GRID_POINTS):
    """GCV choice of the common ``eta``; returns ``(eta_hat, GcvResult)``."""
    spec, Z, cond, P, pts, K = _setup(panel, spec, cap)
    engine = ProfiledKRR(K, P, panel.N, panel.n_z)
    grid = _gcv.default_grid(K, grid_points) if eta_grid is None else eta_grid
    y = panel.Y.reshape(-1)
    res = _gcv.select(lambda e: engine.gcv(y, e)[0], grid, refine=refine)
    return res.eta, res


def predict_homo(fit: HomoFit, panel: PanelData | None, x):
    """``g(x)`` for one ``d``-vector (float) or an ``(m, d)`` array of points."""
    x = np.asarray(x, dtype=float)
    d = fit.points.shape[1]
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    if pts.shape[1] != d:
        raise InputError(f"dimension mismatch: model has d={d}, got {pts.shape[1]}")
    vals = cross_gram(fit.spec, fit.points, pts).T @ fit.a
    return float(vals[0]) if single else vals


def smoother_matrix_homo(panel: PanelData, spec: KernelSpec, eta: float,
                         cap: int = DEFAULT_NT_CAP) -> np.ndarray:
    """``NT x NT`` hat matrix mapping stacked ``Y`` to stacked fitted values.

    ``B = K S + Q (I - K S)`` with ``S = (P_N K + n eta I)^{-1} P_N`` from a
    general (nonsymmetric) solve and ``Q = I_N (x) Z(Z'Z)^{-1}Z'``.
    """
    eta = _check_eta(eta)
    spec, Z, cond, P, pts, K = _setup(panel, spec, cap)
    n = K.shape[0]
    N = panel.N
    PN = apply_blocks(P, np.eye(n), N)
    S = np.linalg.solve(apply_blocks(P, K, N) + n * eta * np.eye(n), PN)
    KS = K @ S
    R = np.eye(n) - KS
    return KS + (R - apply_blocks(P, R, N))


def _sigma(R: np.ndarray, P: np.ndarray, N: int, T: int, n_z: int) -> float:
    q = np.einsum("it,ts,is->", R, P, R)
    return float(max(q, 0.0) / (N * (T - n_z)))


def sigma_eps_homo(fit: HomoFit, panel: PanelData) -> float:
    """``sum_i (Y_i - tau_i g)' P (Y_i - tau_i g) / (N (T - q1 - d))``."""
    R = panel.Y - fit.g_fitted.reshape(panel.N, panel.T)
    return _sigma(R, fit.P, panel.N, panel.T, panel.n_z)


def objective_homo(K, P, N, y, a, eta) -> float:
    n = len(y)
    r = y - K @ a
    return float(r @ apply_blocks(P, r, N) / (2 * n) + 0.5 * eta * a @ K @ a)
