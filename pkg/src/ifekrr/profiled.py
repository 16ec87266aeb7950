"""Kernel ridge regression after projecting out the regressors ``Z``.

Both estimators reduce to the same linear system over ``n = N*T`` anchors::

    (P_N K + n*eta*I) a = P_N y,          P_N = I_N (x) P,  P = I - Z(Z'Z)^{-1}Z'

Premultiplying by ``I - P_N`` shows ``a = P_N a`` for every ``eta > 0``, so the
system is equivalent to the symmetric positive definite one

    (P_N K P_N + n*eta*I) a = P_N y.

With ``P_N K P_N = V diag(lam) V'`` the GCV ingredients are closed form:

    tr(B_eta)         = N*(q1+d) + sum lam / (lam + n*eta)
    ||(I - B_eta) y|| = || n*eta * w / (lam + n*eta) ||,   w = V' P_N y

which lets a whole grid of ``eta`` share one eigendecomposition.
The heterogeneous model is the special case ``N = 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericError
from .kernels import GramEigen


def apply_blocks(P: np.ndarray, A: np.ndarray, N: int) -> np.ndarray:
    """Left-multiply ``A`` (``N*T`` rows) by the block diagonal ``I_N (x) P``."""
    T = P.shape[0]
    if A.ndim == 1:
        return (A.reshape(N, T) @ P.T).reshape(-1)
    rest = A.shape[1:]
    B = A.reshape(N, T, -1)
    out = np.matmul(P, B)
    return out.reshape((N * T,) + rest)


@dataclass
class ProfiledKRR:
    """Reusable factorization of one design (kernel matrix, projection, layout)."""

    K: np.ndarray
    P: np.ndarray
    N: int
    n_z: int
    _lam: np.ndarray | None = field(default=None, repr=False)
    _V: np.ndarray | None = field(default=None, repr=False)
    _M: np.ndarray | None = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def project(self, y: np.ndarray) -> np.ndarray:
        return apply_blocks(self.P, y, self.N)

    @property
    def M(self) -> np.ndarray:
        """``P_N K P_N`` (symmetrized)."""
        if self._M is None:
            left = apply_blocks(self.P, self.K, self.N)
            M = apply_blocks(self.P, left.T.copy(), self.N)
            self._M = 0.5 * (M + M.T)
        return self._M

    def _eig(self):
        if self._lam is None:
            try:
                lam, V = sla.eigh(self.M, driver="evd")
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise NumericError(f"eigendecomposition of the profiled Gram failed: {exc}") from exc
            self._lam = np.clip(lam, 0.0, None)
            self._V = V
        return self._lam, self._V

    def gram_eigen(self) -> GramEigen:
        """Eigen-analysis of ``P_N K P_N / n`` in :class:`GramEigen` form."""
        lam, V = self._eig()
        return GramEigen(gram=self.M, eigvals=lam[::-1] / self.n, eigvecs=V[:, ::-1], n=self.n)

    def gcv_parts(self, y: np.ndarray, etas) -> tuple[np.ndarray, np.ndarray]:
        """Residual sums of squares and smoother traces on a grid of ``eta``."""
        lam, V = self._eig()
        w = V.T @ self.project(y)
        etas = np.atleast_1d(np.asarray(etas, dtype=float))
        L = self.n * etas[:, None]
        shrink = L / (lam[None, :] + L)
        rss = np.sum((shrink * w[None, :]) ** 2, axis=1)
        tr = self.N * self.n_z + np.sum(lam[None, :] / (lam[None, :] + L), axis=1)
        return rss, tr

    def gcv(self, y: np.ndarray, etas) -> tuple[np.ndarray, np.ndarray]:
        """GCV scores and smoother traces on a grid (NaN where ``tr(B) >= n``)."""
        rss, tr = self.gcv_parts(y, etas)
        n = self.n
        denom = n * (1.0 - tr / n) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(tr < n * (1 - 1e-12), rss / denom, np.nan)
        return score, tr

    def solve(self, y: np.ndarray, eta: float) -> tuple[np.ndarray, tuple[str, ...]]:
        """Representer weights for one ``eta`` by Cholesky of the symmetric form."""
        notes: list[str] = []
        L = self.n * eta
        A = self.M.copy()
        A[np.diag_indices_from(A)] += L
        rhs = self.project(y)
        try:
            c = sla.cho_factor(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(self.K) / self.T
            A[np.diag_indices_from(A)] += jitter
            msg = f"Cholesky failed at eta={eta:.3e}; added ridge jitter {jitter:.3e}"
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            notes.append(msg)
            try:
                c = sla.cho_factor(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NumericError(
                    f"system matrix is singular at eta={eta:.3e}; try a larger eta"
                ) from exc
        a = sla.cho_solve(c, rhs, check_finite=False)
        # the exact solution lies in range(P_N)
        return self.project(a), tuple(notes)

    def solve_spectral(self, y: np.ndarray, eta: float) -> np.ndarray:
        lam, V = self._eig()
        w = V.T @ self.project(y)
        return self.project(V @ (w / (lam + self.n * eta)))
