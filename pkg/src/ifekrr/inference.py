"""Pointwise confidence and prediction intervals.

Heterogeneous model (unit ``i``)::

    mean CI      mu_i +- z * sigma_x0 * sigma_eps / sqrt(T h_i)
    gaussian PI  mu_i +- z * sigma_eps * sqrt(sigma_x0^2 / (T h_i) + 1)
    sigma_x0^2 = h_i * sum_v phi_v(x0)^2 / (1 + eta/mu_v)^2

Homogeneous model::

    g CI         g(x0) +- z * sigma_eps / (sqrt(NT) * A_NT(x0))
    A_NT^{-2}  = (1/NT) sum_i K_i(x0)' P K_i(x0)

``K`` above is the regularized kernel of the factor-adjusted inner product.
Evaluated with the eigenpairs of ``P_N Kbar P_N / NT`` it equals
``sum_v phi_v(x0)^2 / (1 + eta/mu_v)^2`` with Nystrom features built from the
projected cross-kernel ``P_N Kbar_x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, InputError
from .hetero import HeteroUnitFit, predict_hetero
from .homo import HomoFit, predict_homo
from .kernels import cross_gram, linear_block, regularized_from_cross
from .panel import PanelData
from .profiled import apply_blocks

EMPIRICAL_PI_DRAWS = 200_000
EMPIRICAL_PI_SEED = 0xC0FFEE
EMPIRICAL_PI_MIN_RESIDUALS = 30
LOW_EFFECTIVE_DIM = 0.5

# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Standard normal quantile.

    Acklam's rational approximation (relative error ~1e-9) followed by one
    Halley step against ``erfc``, which brings it to double precision.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InputError(f"probability must lie in (0, 1), got {p!r}")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def _z(level: float) -> float:
    level = float(level)
    if not 0.0 < level < 1.0:
        raise InputError(f"level must lie in (0, 1), got {level!r}")
    return normal_quantile(1 - (1 - level) / 2)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    std_error: float
    lower: float
    upper: float
    level: float
    kind: str
    meta: dict = field(default_factory=dict)

    @classmethod
    def symmetric(cls, point, se, level, kind, **meta) -> "IntervalEstimate":
        z = _z(level)
        half = z * se
        return cls(float(point), float(se), float(point - half), float(point + half),
                   float(level), kind, dict(meta))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "level": self.level, "point": self.point,
            "std_error": self.std_error, "lower": self.lower, "upper": self.upper,
            "meta": self.meta,
        }


# ---------------------------------------------------------------------------
# heterogeneous model


def _hetero_V(fit: HeteroUnitFit, x0) -> float:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (fit.points.shape[1],):
        raise InputError(f"x0 must be a {fit.points.shape[1]}-vector")
    kx = cross_gram(fit.spec, fit.points, x0[None, :])
    return float(regularized_from_cross(fit.gram_eigen, kx, fit.eta)[0])


def sigma_x0_sq(fit: HeteroUnitFit, panel: PanelData | None, x0) -> float:
    """Plug-in ``h_i * V_i(K_x0, K_x0)`` from the unit's Gram eigenpairs."""
    return fit.h_hat * _hetero_V(fit, x0)


def _mean_parts(fit: HeteroUnitFit, panel: PanelData, x_i0, f_10, x_all0):
    f_10 = np.atleast_1d(np.asarray(f_10, dtype=float))
    if f_10.shape != (panel.q1,):
        raise InputError(f"f_10 must be a q1={panel.q1} vector (intercept first)")
    x_all0 = np.asarray(x_all0, dtype=float).reshape(-1, panel.d)
    z0 = np.concatenate([f_10, x_all0.mean(axis=0)])
    mu = predict_hetero(fit, panel, x_i0) + float(z0 @ fit.beta)
    if not fit.h_hat > 0:
        raise DegenerateError(f"effective dimension is {fit.h_hat}; interval undefined")
    s2x = sigma_x0_sq(fit, panel, x_i0)
    return mu, s2x


def ci_mean_hetero(fit: HeteroUnitFit, panel: PanelData, x_i0, f_10, x_all0,
                   level: float = 0.95) -> IntervalEstimate:
    """Confidence interval for the conditional mean of ``Y_{i,T+1}``."""
    mu, s2x = _mean_parts(fit, panel, x_i0, f_10, x_all0)
    se = math.sqrt(s2x) * math.sqrt(fit.sigma_eps_sq) / math.sqrt(panel.T * fit.h_hat)
    return IntervalEstimate.symmetric(
        mu, se, level, "mean_ci", unit=fit.unit, h_hat=fit.h_hat, sigma_x0_sq=s2x,
        low_effective_dim=fit.h_hat < LOW_EFFECTIVE_DIM,
    )


def convolution_interval(center: float, mean_se: float, residuals, level: float,
                         draws: int = EMPIRICAL_PI_DRAWS, seed: int = EMPIRICAL_PI_SEED):
    """Quantiles of ``N(0, mean_se^2) + F_resid`` by seeded Monte Carlo."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size < EMPIRICAL_PI_MIN_RESIDUALS:
        raise InputError(
            f"empirical prediction interval needs >= {EMPIRICAL_PI_MIN_RESIDUALS} residuals, got {r.size}"
        )
    alpha = 1 - float(level)
    rng = np.random.default_rng(seed)
    sample = r[rng.integers(0, r.size, draws)] + mean_se * rng.standard_normal(draws)
    lo, hi = np.quantile(sample, [alpha / 2, 1 - alpha / 2], method="linear")
    return center + float(lo), center + float(hi)


def prediction_interval(fit: HeteroUnitFit, panel: PanelData, x_i0, f_10, x_all0,
                        level: float = 0.95, noise_model: str = "gaussian") -> IntervalEstimate:
    """Prediction interval for ``Y_{i,T+1}``; ``noise_model`` is gaussian or empirical."""
    mu, s2x = _mean_parts(fit, panel, x_i0, f_10, x_all0)
    T, h = panel.T, fit.h_hat
    sig = math.sqrt(fit.sigma_eps_sq)
    meta = dict(unit=fit.unit, h_hat=h, sigma_x0_sq=s2x, noise_model=noise_model,
                low_effective_dim=h < LOW_EFFECTIVE_DIM)
    if noise_model == "gaussian":
        se = sig * math.sqrt(s2x / (T * h) + 1.0)
        return IntervalEstimate.symmetric(mu, se, level, "prediction", **meta)
    if noise_model == "empirical":
        _z(level)
        mean_se = math.sqrt(s2x) * sig / math.sqrt(T * h)
        resid = panel.Y[fit.unit] - fit.fitted
        lo, hi = convolution_interval(mu, mean_se, resid, level)
        se = math.sqrt(mean_se**2 + float(np.mean(resid**2)))
        meta.update(draws=EMPIRICAL_PI_DRAWS, seed=EMPIRICAL_PI_SEED)
        return IntervalEstimate(mu, se, lo, hi, float(level), "prediction", meta)
    raise InputError(f"noise_model must be 'gaussian' or 'empirical', got {noise_model!r}")


# ---------------------------------------------------------------------------
# homogeneous model


def _as_rows(fit: HomoFit, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = fit.points.shape[1]
    if x.ndim <= 1:
        x = x.reshape(1, -1)
    if x.shape[1] != d:
        raise InputError(f"dimension mismatch: model has d={d}, got {x.shape[1]}")
    return x


def v_nt(fit: HomoFit, x) -> np.ndarray:
    """``A_NT(x)^{-2}`` at each row of ``x``."""
    xs = _as_rows(fit, x)
    kx = cross_gram(fit.spec, fit.points, xs)
    pk = apply_blocks(fit.P, kx, fit.N)
    return regularized_from_cross(fit.gram_eigen, pk, fit.eta)


def a_nt(fit: HomoFit, panel: PanelData | None, x0) -> float:
    """Standardization ``A_NT(x0)`` making ``sqrt(NT) A_NT (g_hat - g)`` unit-scale."""
    v = float(v_nt(fit, x0)[0])
    if not v > 1e-14:
        raise DegenerateError(f"V_NT(x0) = {v:.3e}; the design carries no information at x0")
    return v ** -0.5


def ci_g_homo(fit: HomoFit, panel: PanelData | None, x0, level: float = 0.95) -> IntervalEstimate:
    """Pointwise confidence interval for ``g(x0)``."""
    A = a_nt(fit, panel, x0)
    n = fit.N * fit.T
    se = math.sqrt(fit.sigma_eps_sq) / (math.sqrt(n) * A)
    return IntervalEstimate.symmetric(
        predict_homo(fit, panel, x0), se, level, "g_ci", a_nt=A, h_hat=fit.h_hat,
        low_effective_dim=fit.h_hat < LOW_EFFECTIVE_DIM,
    )


def ci_g_homo_grid(fit: HomoFit, xs, level: float = 0.95):
    """Vectorized :func:`ci_g_homo`: returns ``(point, std_error, lower, upper)`` arrays."""
    xs = _as_rows(fit, xs)
    v = v_nt(fit, xs)
    if np.any(v <= 1e-14):
        raise DegenerateError("V_NT vanishes at some grid point")
    n = fit.N * fit.T
    se = math.sqrt(fit.sigma_eps_sq) * np.sqrt(v / n)
    point = predict_homo(fit, None, xs)
    half = _z(level) * se
    return point, se, point - half, point + half


def ci_beta_partial_linear(fit: HomoFit, panel: PanelData | None, anchor, direction: int,
                           level: float = 0.95) -> IntervalEstimate:
    """Interval for the coefficient of coordinate ``direction`` in a partial-linear ``g``.

    ``anchor`` is a full covariate vector whose nonlinear coordinates sit where the
    nonlinear part vanishes; the linear block is reset to the unit vector along
    ``direction`` and the ``g`` interval is evaluated there.
    """
    block = linear_block(fit.spec)
    if block is None:
        raise InputError("kernel has no linear block; use add([..]:linear, ...)")
    if direction not in block:
        raise InputError(f"coordinate {direction} is not in the linear block {list(block)}")
    x = np.array(anchor, dtype=float).reshape(-1)
    if x.size != fit.points.shape[1]:
        raise InputError(f"anchor must be a {fit.points.shape[1]}-vector")
    x[list(block)] = 0.0
    x[direction] = 1.0
    ci = ci_g_homo(fit, panel, x, level)
    meta = dict(ci.meta, direction=int(direction), evaluated_at=x.tolist())
    return IntervalEstimate(ci.point, ci.std_error, ci.lower, ci.upper, ci.level, "beta_ci", meta)
