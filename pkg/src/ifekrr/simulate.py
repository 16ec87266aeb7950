"""Synthetic panels and Monte Carlo drivers.

Replication ``r`` of a run seeded with ``seed`` draws from
``numpy.random.default_rng(SeedSequence([seed, r]))``; replications never
share a stream, so results do not depend on how they are scheduled.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import beta as _beta

from . import __version__
from .errors import IfeKrrError, InputError, NumericError
from .hetero import fit_hetero
from .homo import DEFAULT_NT_CAP, fit_homo, fit_homo_gcv
from .inference import ci_g_homo_grid
from .kernels import KernelSpec, format_kernel, parse_kernel
from .panel import PanelData

DESIGNS = ("hetero_sj", "homo_beta", "firm_analog")
FIRM_BETA = (0.10, 0.10, 0.73)

DEFAULT_KERNELS = {
    "hetero_sj": "add([0]:gaussian(b=1.0), [1]:poly(k=3))",
    "homo_beta": "gaussian(b=0.1)",
    "firm_analog": "add([0,1,2]:linear, [3]:poly(k=3))",
}


@dataclass(frozen=True)
class DgpSpec:
    """Which synthetic design to draw and at what size.

    ``homogeneous`` (``hetero_sj`` only) gives every unit the same ``delta``;
    ``delta`` pins that common value instead of drawing it.
    ``sqrt_innovation_scale`` switches the AR(1) noise innovations from
    ``sigma * (1 - rho^2)`` to ``sigma * sqrt(1 - rho^2)``. ``noise_scale``
    multiplies the outcome error only (0 gives noiseless responses).
    """

    design: str
    N: int
    T: int
    seed: int = 0
    homogeneous: bool = False
    delta: float | None = None
    sqrt_innovation_scale: bool = False
    beta: tuple = FIRM_BETA
    noise_scale: float = 1.0
    cap: int = DEFAULT_NT_CAP

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise InputError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if int(self.N) < 1 or int(self.T) < 1:
            raise InputError("N and T must be positive")
        if self.N * self.T > self.cap:
            raise InputError(f"N*T = {self.N * self.T} exceeds the cap {self.cap}")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if self.delta is not None and not np.isfinite(self.delta):
            raise InputError("delta must be finite")
        if not (np.isfinite(self.noise_scale) and self.noise_scale >= 0):
            raise InputError("noise_scale must be a nonnegative real")
        if len(self.beta) != 3:
            raise InputError("beta must have three entries")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def pooled(self) -> bool:
        """True when every unit shares one ``g``."""
        return self.design == "homo_beta" or self.design == "firm_analog" or self.homogeneous

    def rng(self, rep: int | None = None) -> np.random.Generator:
        key = [int(self.seed)] if rep is None else [int(self.seed), int(rep)]
        return np.random.default_rng(np.random.SeedSequence(key))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        return d


def gen_ar1(length: int, rho: float, innovation_sd: float, rng: np.random.Generator) -> np.ndarray:
    """``e_t = rho e_{t-1} + innovation_sd * xi_t`` started from its stationary law."""
    if not abs(rho) < 1:
        raise InputError(f"|rho| must be < 1, got {rho!r}")
    if innovation_sd < 0:
        raise InputError("innovation_sd must be nonnegative")
    xi = rng.standard_normal(int(length) + 1)
    out = np.empty(int(length))
    prev = xi[0] * innovation_sd / math.sqrt(1 - rho * rho)
    for t in range(int(length)):
        prev = rho * prev + innovation_sd * xi[t + 1]
        out[t] = prev
    return out


def _noise(spec: DgpSpec, T: int, rng) -> np.ndarray:
    rho, s2 = rng.uniform(0.0, 0.95, 2)
    scale = math.sqrt(1 - rho * rho) if spec.sqrt_innovation_scale else (1 - rho * rho)
    return gen_ar1(T, rho, math.sqrt(s2) * scale, rng)


def _factors(T: int, k: int, rng) -> np.ndarray:
    return np.stack([gen_ar1(T, 0.5, math.sqrt(1 - 0.25), rng) for _ in range(k)], axis=1)


def sj_g(x, delta: float) -> np.ndarray:
    """Logistic in ``x_1`` plus ``delta`` times a quadratic in ``x_2``."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return 1.0 / (1.0 + np.exp(-x1)) + delta * (0.5 * x2 - 0.25 * x2**2)


def sj_loadings(N: int, rng: np.random.Generator):
    """Factor loadings ``(gamma2, Gamma1, Gamma2)`` with shapes ``(N,2), (N,2), (N,4)``.

    ``gamma2`` and ``Gamma1`` rows are bivariate normal with correlation 0.5;
    ``Gamma2`` rows are ``N((1, 0, 0, 1), I)`` in row-major ``(s, k)`` order.
    """
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    gamma2 = rng.multivariate_normal(np.zeros(2), cov, size=N)
    Gamma1 = rng.multivariate_normal(np.zeros(2), cov, size=N)
    Gamma2 = rng.standard_normal((N, 4)) + np.array([1.0, 0.0, 0.0, 1.0])
    return gamma2, Gamma1, Gamma2


def gen_hetero_sj(spec: DgpSpec, rng: np.random.Generator | None = None):
    """Two-covariate panel with unit-specific ``g_i`` and two latent factors.

    Returns ``(panel, true_g)`` where ``true_g[i](x)`` evaluates ``g_i`` on
    ``(..., 2)`` arrays.
    """
    if spec.design != "hetero_sj":
        raise InputError("gen_hetero_sj needs design='hetero_sj'")
    rng = spec.rng() if rng is None else rng
    N, T = spec.N, spec.T
    f2 = _factors(T, 2, rng)
    gamma2, Gamma1, Gamma2 = sj_loadings(N, rng)
    X = np.empty((N, T, 2))
    eps = np.empty((N, T))
    for i in range(N):
        for s in range(2):
            v = _noise(spec, T, rng)
            X[i, :, s] = Gamma1[i, s] + f2 @ Gamma2[i, 2 * s: 2 * s + 2] + v
        eps[i] = _noise(spec, T, rng)
    if spec.homogeneous:
        common = rng.uniform() if spec.delta is None else float(spec.delta)
        delta = np.full(N, common)
    else:
        delta = rng.uniform(size=N) if spec.delta is None else np.full(N, float(spec.delta))
    G = sj_g(X, delta[:, None])
    gamma1 = 0.5 * X[:, :, 0].mean(axis=1) + 0.5 * X[:, :, 1].mean(axis=1)
    Y = G + gamma1[:, None] + gamma2 @ f2.T + spec.noise_scale * eps
    panel = PanelData(Y=Y, X=X, F1=np.ones((T, 1)))
    true_g = [(lambda x, d=float(delta[i]): sj_g(x, d)) for i in range(N)]
    return panel, true_g


def beta_mixture_g(x) -> np.ndarray:
    """``0.6 * Beta(30, 17) + 0.4 * Beta(3, 11)`` density."""
    x = np.asarray(x, dtype=float)
    return 0.6 * _beta.pdf(x, 30, 17) + 0.4 * _beta.pdf(x, 3, 11)


def gen_homo_beta(spec: DgpSpec, rng: np.random.Generator | None = None):
    """Scalar-covariate panel with a common beta-mixture ``g``.

    Two observed AR(0.5) factors enter ``F1`` after the intercept. One latent
    AR(0.5) factor drives both ``x`` and ``y``: with a scalar covariate the
    cross-section average can stand in for at most one latent factor.
    Returns ``(panel, true_g)``.
    """
    if spec.design != "homo_beta":
        raise InputError("gen_homo_beta needs design='homo_beta'")
    rng = spec.rng() if rng is None else rng
    N, T = spec.N, spec.T
    f1 = _factors(T, 2, rng)
    f2 = _factors(T, 1, rng)[:, 0]
    Gamma1 = rng.standard_normal((N, 2))
    Gamma2 = rng.normal(1.0, 1.0, N)
    gamma2 = rng.standard_normal(N)
    X = Gamma1 @ f1.T + np.outer(Gamma2, f2) + rng.standard_normal((N, T))
    eps = rng.standard_normal((N, T))
    xbar = X.mean(axis=1)
    Y = beta_mixture_g(X) + np.outer(xbar, f1.sum(axis=1)) + np.outer(gamma2, f2) + spec.noise_scale * eps
    F1 = np.column_stack([np.ones(T), f1])
    return PanelData(Y=Y, X=X[:, :, None], F1=F1), beta_mixture_g


def firm_f(x) -> np.ndarray:
    """Increasing export-intensity effect on ``[0, 1]`` with ``f(0) = 0``."""
    x = np.asarray(x, dtype=float)
    return 0.3 * np.log1p(4.0 * x) / math.log(5.0)


def gen_firm_analog(spec: DgpSpec, rng: np.random.Generator | None = None) -> PanelData:
    """Partial-linear production panel: three log inputs plus export intensity.

    ``Y = beta' X[:3] + f(X[3]) + gamma_1i + gamma_2i f_2t + e``.
    """
    if spec.design != "firm_analog":
        raise InputError("gen_firm_analog needs design='firm_analog'")
    rng = spec.rng() if rng is None else rng
    N, T = spec.N, spec.T
    f2 = _factors(T, 1, rng)[:, 0]
    level = rng.normal(3.0, 1.0, (N, 1))
    load = rng.normal(0.5, 0.25, (N, 3))
    inputs = level[:, :, None] + load[:, None, :] * f2[None, :, None] + 0.5 * rng.standard_normal((N, T, 3))
    propensity = rng.normal(0.0, 1.0, (N, 1))
    intensity = 1.0 / (1.0 + np.exp(-(propensity + 0.5 * rng.standard_normal((N, T)))))
    X = np.concatenate([inputs, intensity[:, :, None]], axis=2)
    gamma1 = rng.normal(0.0, 1.0, N)
    gamma2 = rng.normal(0.0, 1.0, N)
    b = np.asarray(spec.beta)
    Y = (inputs @ b + firm_f(intensity) + gamma1[:, None] + gamma2[:, None] * f2[None, :]
         + 0.1 * spec.noise_scale * rng.standard_normal((N, T)))
    return PanelData(Y=Y, X=X, F1=np.ones((T, 1)))


def generate(spec: DgpSpec, rng: np.random.Generator | None = None):
    """``(panel, truth)`` for any design; ``truth`` evaluates ``g`` on ``(..., d)`` points.

    For unit-specific designs ``truth`` is a list with one evaluator per unit.
    """
    if spec.design == "hetero_sj":
        return gen_hetero_sj(spec, rng)
    if spec.design == "homo_beta":
        return gen_homo_beta(spec, rng)
    b = np.asarray(spec.beta)
    panel = gen_firm_analog(spec, rng)
    return panel, (lambda x: np.asarray(x)[..., :3] @ b + firm_f(np.asarray(x)[..., 3]))


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class EstimatorConfig:
    """How each replication is fitted.

    ``eta`` is ``"gcv"`` or a positive real. ``eta_scale`` multiplies the
    GCV choice (values below 1 undersmooth). ``grid_points`` sizes the GCV grid.
    """

    model: str = "auto"
    kernel: str | None = None
    eta: float | str = "gcv"
    eta_scale: float = 1.0
    grid_points: int = 40
    refine: bool = True
    cap: int = DEFAULT_NT_CAP

    def __post_init__(self):
        if self.model not in ("auto", "hetero", "homo"):
            raise InputError(f"model must be auto, hetero or homo, got {self.model!r}")
        if isinstance(self.eta, str):
            if self.eta != "gcv":
                raise InputError(f"eta must be a positive real or 'gcv', got {self.eta!r}")
        elif not (np.isfinite(self.eta) and self.eta > 0):
            raise InputError(f"eta must be positive, got {self.eta!r}")
        if not (np.isfinite(self.eta_scale) and self.eta_scale > 0):
            raise InputError("eta_scale must be positive")
        if self.grid_points < 2:
            raise InputError("grid_points must be at least 2")
        if self.kernel is not None:
            parse_kernel(self.kernel)

    def resolve(self, dgp: DgpSpec) -> tuple[str, KernelSpec]:
        model = self.model
        if model == "auto":
            model = "homo" if dgp.pooled else "hetero"
        return model, parse_kernel(self.kernel or DEFAULT_KERNELS[dgp.design])

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_homo(panel, spec, cfg: EstimatorConfig):
    if cfg.eta == "gcv":
        return fit_homo_gcv(panel, spec, refine=cfg.refine, cap=cfg.cap,
                            eta_scale=cfg.eta_scale, grid_points=cfg.grid_points)
    return fit_homo(panel, spec, float(cfg.eta) * cfg.eta_scale, cap=cfg.cap)


def _fit_hetero(panel, spec, cfg: EstimatorConfig):
    if cfg.eta == "gcv":
        return fit_hetero(panel, spec, "gcv", refine=cfg.refine, eta_scale=cfg.eta_scale,
                          grid_points=cfg.grid_points)
    return fit_hetero(panel, spec, float(cfg.eta) * cfg.eta_scale)


def _stats(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": None, "mc_se": None, "sd": None, "n": 0}
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "mc_se": sd / math.sqrt(v.size), "sd": sd, "n": int(v.size)}


def _run_reps(job: Callable[[int], dict], reps: int, threads: int) -> list:
    if threads <= 1:
        return [job(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, range(reps)))


def _guard(job: Callable[[int], dict]) -> Callable[[int], dict]:
    def wrapped(r: int) -> dict:
        try:
            return job(r)
        except (IfeKrrError, np.linalg.LinAlgError) as exc:
            kind = getattr(exc, "kind", "numeric_error")
            return {"rep": r, "failed": True, "kind": kind, "message": str(exc)}
    return wrapped


@dataclass
class McReport:
    """Monte Carlo summary; ``runtime`` is excluded from the reproducible payload."""

    kind: str
    config: dict
    summary: dict
    cells: list
    failures: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    def payload(self) -> dict:
        return {
            "kind": self.kind, "version": __version__, "config": self.config,
            "summary": self.summary, "cells": self.cells, "failures": self.failures,
        }

    def to_dict(self) -> dict:
        d = self.payload()
        d["runtime"] = self.runtime
        return d

    def to_json(self, include_runtime: bool = True) -> str:
        d = self.to_dict() if include_runtime else self.payload()
        return json.dumps(d, sort_keys=True, indent=2, allow_nan=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.cells:
            return ""
        keys = list(self.cells[0].keys())
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in self.cells:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _config(kind: str, dgp: DgpSpec, est: EstimatorConfig, reps: int, **extra) -> dict:
    model, kspec = est.resolve(dgp)
    cfg = {"dgp": dgp.to_dict(), "estimator": est.to_dict(), "reps": int(reps),
           "model": model, "kernel": format_kernel(kspec), "rng": "SeedSequence([seed, rep])"}
    cfg.update(extra)
    return cfg


def _default_threads(threads: int | None) -> int:
    if threads is None:
        return os.cpu_count() or 1
    return max(1, int(threads))


def mc_mse(dgp: DgpSpec, est: EstimatorConfig | None = None, reps: int = 100,
           threads: int | None = 1) -> McReport:
    """Mean squared error of ``g_hat`` at the design points over ``reps`` panels.

    Besides the raw MSE the report carries the level-adjusted MSE (error
    variance after removing its mean) and the mean of the noise-variance
    estimate.
    """
    est = est or EstimatorConfig()
    if reps < 2:
        raise InputError("reps must be at least 2")
    model, kspec = est.resolve(dgp)
    threads = _default_threads(threads)

    def job(r: int) -> dict:
        panel, truth = generate(dgp, dgp.rng(r))
        if model == "homo":
            fit = _fit_homo(panel, kspec, est)
            g = truth[0](panel.X) if isinstance(truth, list) else truth(panel.X)
            err = fit.g_fitted - np.asarray(g).reshape(-1)
            return {"rep": r, "failed": False, "mse": float(np.mean(err**2)),
                    "mse_level_adjusted": float(np.var(err)),
                    "sigma_eps_sq": fit.sigma_eps_sq, "eta": fit.eta, "h_hat": fit.h_hat}
        fits = _fit_hetero(panel, kspec, est)
        errs = []
        for f in fits:
            g = truth[f.unit](panel.X[f.unit]) if isinstance(truth, list) else truth(panel.X[f.unit])
            errs.append(f.g_fitted - np.asarray(g).reshape(-1))
        return {"rep": r, "failed": False,
                "mse": float(np.mean([np.mean(e**2) for e in errs])),
                "mse_level_adjusted": float(np.mean([np.var(e) for e in errs])),
                "sigma_eps_sq": float(np.mean([f.sigma_eps_sq for f in fits])),
                "eta": float(np.median([f.eta for f in fits])),
                "h_hat": float(np.mean([f.h_hat for f in fits]))}

    t0 = time.perf_counter()
    rows = _run_reps(_guard(job), reps, threads)
    wall = time.perf_counter() - t0
    ok = [row for row in rows if not row["failed"]]
    failures = [{k: row[k] for k in ("rep", "kind", "message")} for row in rows if row["failed"]]
    summary = {
        "mse": _stats([row["mse"] for row in ok]),
        "mse_level_adjusted": _stats([row["mse_level_adjusted"] for row in ok]),
        "sigma_eps_sq": _stats([row["sigma_eps_sq"] for row in ok]),
        "eta_median": float(np.median([row["eta"] for row in ok])) if ok else None,
        "reps_ok": len(ok), "reps_failed": len(failures),
    }
    cells = [{k: row[k] for k in ("rep", "mse", "mse_level_adjusted", "sigma_eps_sq", "eta", "h_hat")}
             for row in ok]
    return McReport("mse", _config("mse", dgp, est, reps), summary, cells, failures,
                    {"wall_seconds": wall, "threads": threads})


def default_x_grid(points: int = 100) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def mc_coverage(dgp: DgpSpec, est: EstimatorConfig | None = None, x_grid=None,
                level: float = 0.95, reps: int = 100, threads: int | None = 1) -> McReport:
    """Pointwise coverage of the homogeneous ``g`` interval on a grid of scalar ``x``."""
    est = est or EstimatorConfig()
    if reps < 2:
        raise InputError("reps must be at least 2")
    if dgp.design != "homo_beta":
        raise InputError("coverage runs use the scalar homo_beta design")
    model, kspec = est.resolve(dgp)
    if model != "homo":
        raise InputError("coverage runs fit the homogeneous model")
    xg = default_x_grid() if x_grid is None else np.asarray(x_grid, dtype=float).reshape(-1)
    if xg.size == 0 or not np.all(np.isfinite(xg)):
        raise InputError("x_grid must be a non-empty finite sequence")
    threads = _default_threads(threads)
    g_true = beta_mixture_g(xg)

    def job(r: int) -> dict:
        panel, _ = gen_homo_beta(dgp, dgp.rng(r))
        fit = _fit_homo(panel, kspec, est)
        _, se, lo, hi = ci_g_homo_grid(fit, xg[:, None], level)
        inside = (lo <= g_true) & (g_true <= hi)
        return {"rep": r, "failed": False, "inside": inside, "se": se, "eta": fit.eta,
                "sigma_eps_sq": fit.sigma_eps_sq}

    t0 = time.perf_counter()
    rows = _run_reps(_guard(job), reps, threads)
    wall = time.perf_counter() - t0
    ok = [row for row in rows if not row["failed"]]
    failures = [{k: row[k] for k in ("rep", "kind", "message")} for row in rows if row["failed"]]
    if not ok:
        raise NumericError(f"all {reps} replications failed; first: {failures[0]['message']}")
    hits = np.array([row["inside"] for row in ok], dtype=float)
    cov = hits.mean(axis=0)
    m = len(ok)
    bse = np.sqrt(cov * (1 - cov) / m)
    mean_se = np.mean([row["se"] for row in ok], axis=0)
    cells = [{"x": float(x), "g_true": float(g), "coverage": float(c), "binomial_se": float(b),
              "mean_std_error": float(s)} for x, g, c, b, s in zip(xg, g_true, cov, bse, mean_se)]
    summary = {
        "mean_coverage": float(cov.mean()), "min_coverage": float(cov.min()),
        "points_below_0_88": int((cov < 0.88).sum()), "level": float(level),
        "sigma_eps_sq": _stats([row["sigma_eps_sq"] for row in ok]),
        "eta_median": float(np.median([row["eta"] for row in ok])),
        "reps_ok": m, "reps_failed": len(failures),
    }
    cfg = _config("coverage", dgp, est, reps, level=float(level), x_grid=[float(x) for x in xg])
    return McReport("coverage", cfg, summary, cells, failures, {"wall_seconds": wall, "threads": threads})
