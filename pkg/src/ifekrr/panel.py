"""Balanced panel container and the cross-sectional-average transformation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, RankDeficiencyError


@dataclass(frozen=True)
class PanelData:
    """Balanced panel of ``N`` units observed at ``T`` times.

    Attributes
    ----------
    Y : (N, T) responses.
    X : (N, T, d) covariates.
    F1 : (T, q1) observed common factors; column 0 is the intercept.
    """

    Y: np.ndarray
    X: np.ndarray
    F1: np.ndarray
    unit_labels: tuple = field(default=())
    time_labels: tuple = field(default=())

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        F1 = np.asarray(self.F1, dtype=float)
        if Y.ndim != 2:
            raise InputError(f"Y must be (N, T), got shape {Y.shape}")
        N, T = Y.shape
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3 or X.shape[:2] != (N, T):
            raise InputError(f"X must be (N, T, d) with N={N}, T={T}, got shape {X.shape}")
        if F1.ndim == 1:
            F1 = F1[:, None]
        if F1.ndim != 2 or F1.shape[0] != T or F1.shape[1] < 1:
            raise InputError(f"F1 must be (T, q1) with T={T}, got shape {F1.shape}")
        if N < 1:
            raise InputError("panel has no units")
        if not np.all(F1[:, 0] == 1.0):
            raise InputError("first column of F1 must be the constant 1")
        for name, arr in (("Y", Y), ("X", X), ("F1", F1)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains missing or non-finite values")
        q = F1.shape[1] + X.shape[2]
        if T < q + 1:
            raise InputError(f"T={T} is too short: need T >= q1 + d + 1 = {q + 1}")
        # zero-padded so lexicographic order matches index order
        units = tuple(self.unit_labels) or tuple(f"{i:0{len(str(N - 1))}d}" for i in range(N))
        times = tuple(self.time_labels) or tuple(f"{t:0{len(str(T - 1))}d}" for t in range(T))
        if len(units) != N or len(times) != T:
            raise InputError("label lengths do not match panel shape")
        for arr in (Y, X, F1):
            arr.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "F1", F1)
        object.__setattr__(self, "unit_labels", units)
        object.__setattr__(self, "time_labels", times)

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    @property
    def q1(self) -> int:
        return self.F1.shape[1]

    @property
    def n_z(self) -> int:
        """Number of columns of Z, ``q1 + d``."""
        return self.q1 + self.d

    def stacked_points(self) -> np.ndarray:
        """All ``N*T`` covariate vectors in unit-major order."""
        return self.X.reshape(self.N * self.T, self.d)

    def subset_units(self, idx: Sequence[int]) -> "PanelData":
        idx = list(idx)
        return PanelData(
            self.Y[idx], self.X[idx], self.F1,
            tuple(self.unit_labels[i] for i in idx), self.time_labels,
        )


def build_Z(panel: PanelData) -> np.ndarray:
    """``Z`` with row ``t`` equal to ``(f_1t', mean_i X_it')``."""
    Xbar = panel.X.mean(axis=0)
    return np.hstack([panel.F1, Xbar])


def check_full_rank(Z: np.ndarray, rtol: float = 1e-10) -> float:
    """Raise unless ``Z`` has full column rank; return its condition number."""
    Z = np.asarray(Z, dtype=float)
    s = np.linalg.svd(Z, compute_uv=False)
    if s.size == 0 or s[-1] <= rtol * s[0]:
        # locate columns that are (near) combinations of the preceding ones
        bad = []
        for j in range(Z.shape[1]):
            sub = Z[:, : j + 1]
            sv = np.linalg.svd(sub, compute_uv=False)
            if sv[-1] <= rtol * max(sv[0], 1e-300):
                bad.append(j)
        raise RankDeficiencyError(
            f"Z is rank deficient (singular values {s[-1]:.3e} / {s[0]:.3e}); "
            f"dependent columns: {bad}",
            columns=bad,
        )
    return float(s[0] / s[-1])


def projection_P(Z: np.ndarray) -> np.ndarray:
    """Annihilator ``I - Z (Z'Z)^{-1} Z'`` of the column space of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError("Z must be 2-D")
    check_full_rank(Z)
    Q, _ = np.linalg.qr(Z)
    P = np.eye(Z.shape[0]) - Q @ Q.T
    return 0.5 * (P + P.T)


def ols(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of ``y`` (or columns of ``y``) on ``Z``."""
    return np.linalg.lstsq(Z, y, rcond=None)[0]
