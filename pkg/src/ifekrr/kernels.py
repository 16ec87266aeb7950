"""Kernels, Gram matrices and their empirical eigen-analysis.

Kernel specifications are small immutable objects::

    Linear()                      k(x, y) = x'y
    Polynomial(order=k)           k(x, y) = (1 + x'y) ** (k - 1)
    Gaussian(bandwidth=b)         k(x, y) = exp(-||x - y||^2 / b^2)
    Additive(((idx, spec), ...))  k(x, y) = sum_j spec_j(x[idx_j], y[idx_j])

``Polynomial(order=k)`` has rank ``k`` in one dimension, so ``Polynomial(1)``
is the constant kernel and ``Polynomial(2)`` is the affine kernel ``1 + x'y``.
``Gaussian(None)`` defers the bandwidth to the median pairwise distance of the
data it is first fitted on (see :func:`resolve_bandwidths`).

String grammar (used by the CLI; :func:`format_kernel` is the canonical
printer and ``parse_kernel(format_kernel(s)) == s``)::

    spec      := linear | poly | gaussian | additive
    linear    := "linear" [ "()" ]
    poly      := "poly(k=" INT ")"
    gaussian  := "gaussian(" [ "b=" FLOAT | "b=median" ] ")"
    additive  := "add(" component { "," component } ")"
    component := "[" INT { "," INT } "]" ":" spec

Whitespace between tokens is ignored. Example:
``add([0]:gaussian(b=1.0), [1]:poly(k=3))``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Tuple, Union

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateError, InputError, NumericError, SpecError

# eigenvalues below this fraction of the largest are treated as zero
RANK_RTOL = 1e-10
# maximum number of points used by the median heuristic
_MEDIAN_MAX_POINTS = 2000


@dataclass(frozen=True)
class Linear:
    pass


@dataclass(frozen=True)
class Polynomial:
    order: int

    def __post_init__(self):
        if isinstance(self.order, bool) or int(self.order) != self.order or self.order < 1:
            raise SpecError(f"polynomial order must be a positive integer, got {self.order!r}")
        object.__setattr__(self, "order", int(self.order))


@dataclass(frozen=True)
class Gaussian:
    bandwidth: float | None = None

    def __post_init__(self):
        if self.bandwidth is not None:
            b = float(self.bandwidth)
            if not np.isfinite(b) or b <= 0:
                raise SpecError(f"gaussian bandwidth must be positive, got {self.bandwidth!r}")
            object.__setattr__(self, "bandwidth", b)


@dataclass(frozen=True)
class Additive:
    components: Tuple[Tuple[Tuple[int, ...], "KernelSpec"], ...]

    def __post_init__(self):
        comps = []
        seen: set[int] = set()
        if len(self.components) == 0:
            raise SpecError("additive kernel needs at least one component")
        for idx, sub in self.components:
            idx = tuple(int(i) for i in idx)
            if len(idx) == 0:
                raise SpecError("additive component has an empty index set")
            if any(i < 0 for i in idx):
                raise SpecError(f"negative coordinate index in {idx}")
            if len(set(idx)) != len(idx) or seen.intersection(idx):
                raise SpecError(f"additive index sets overlap at {sorted(seen.intersection(idx) or idx)}")
            if isinstance(sub, Additive):
                raise SpecError("nested additive kernels are not supported")
            seen.update(idx)
            comps.append((idx, sub))
        object.__setattr__(self, "components", tuple(comps))

    @property
    def input_dim(self) -> int:
        return 1 + max(i for idx, _ in self.components for i in idx)

    def check_dim(self, d: int) -> None:
        covered = sorted(i for idx, _ in self.components for i in idx)
        if covered != list(range(d)):
            raise SpecError(
                f"additive index sets {covered} do not cover input dimension {d}"
            )


KernelSpec = Union[Linear, Polynomial, Gaussian, Additive]


# ---------------------------------------------------------------------------
# evaluation


def _as_points(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        # a flat array is a sample of scalar points
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise InputError(f"points must be a 2-D array, got shape {a.shape}")
    return a


def _dot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # coordinate-wise accumulation keeps k(x, y) == k(y, x) bit-for-bit
    out = np.zeros((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        out += A[:, j, None] * B[None, :, j]
    return out


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    out = np.zeros((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        diff = A[:, j, None] - B[None, :, j]
        out += diff * diff
    return out


def _cross(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if isinstance(spec, Linear):
        return _dot(A, B)
    if isinstance(spec, Polynomial):
        if spec.order == 1:
            return np.ones((A.shape[0], B.shape[0]))
        return (1.0 + _dot(A, B)) ** (spec.order - 1)
    if isinstance(spec, Gaussian):
        if spec.bandwidth is None:
            raise SpecError("gaussian bandwidth is unresolved; call resolve_bandwidths first")
        return np.exp(-_sqdist(A, B) / spec.bandwidth**2)
    if isinstance(spec, Additive):
        spec.check_dim(A.shape[1])
        out = np.zeros((A.shape[0], B.shape[0]))
        for idx, sub in spec.components:
            out += _cross(sub, A[:, idx], B[:, idx])
        return out
    raise SpecError(f"unknown kernel spec {spec!r}")


def cross_gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Kernel matrix ``K[s, t] = k(A[s], B[t])`` between two point sets."""
    A = _as_points(A)
    B = _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return _cross(spec, A, B)


def gram(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric Gram matrix of ``spec`` over the rows of ``points``."""
    P = _as_points(points)
    if P.shape[0] < 1:
        raise InputError("gram needs at least one point")
    G = _cross(spec, P, P)
    # BLAS-free assembly is already symmetric; enforce it against roundoff anyway
    return 0.5 * (G + G.T)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate ``k(x, y)`` for two vectors of equal length."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(_cross(spec, x[None, :], y[None, :])[0, 0])


# ---------------------------------------------------------------------------
# bandwidths


def median_bandwidth(points) -> float:
    """Median pairwise Euclidean distance (deterministic subsample above 2000 rows)."""
    P = _as_points(points)
    n = P.shape[0]
    if n > _MEDIAN_MAX_POINTS:
        P = P[np.linspace(0, n - 1, _MEDIAN_MAX_POINTS).astype(int)]
        n = P.shape[0]
    if n < 2:
        raise SpecError("median bandwidth needs at least two points")
    iu = np.triu_indices(n, 1)
    med = float(np.median(np.sqrt(_sqdist(P, P)[iu])))
    if med <= 0:
        raise SpecError("median pairwise distance is zero; give the bandwidth explicitly")
    return med


def resolve_bandwidths(spec: KernelSpec, points) -> KernelSpec:
    """Return ``spec`` with every deferred gaussian bandwidth fixed from ``points``."""
    P = _as_points(points)
    if isinstance(spec, Gaussian) and spec.bandwidth is None:
        return Gaussian(median_bandwidth(P))
    if isinstance(spec, Additive):
        spec.check_dim(P.shape[1])
        return Additive(
            tuple((idx, resolve_bandwidths(sub, P[:, idx])) for idx, sub in spec.components)
        )
    return spec


def is_resolved(spec: KernelSpec) -> bool:
    if isinstance(spec, Gaussian):
        return spec.bandwidth is not None
    if isinstance(spec, Additive):
        return all(is_resolved(sub) for _, sub in spec.components)
    return True


# ---------------------------------------------------------------------------
# string grammar

_TOKEN = re.compile(r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_]+)|(?P<sym>[()\[\]:,=]))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise SpecError(f"cannot parse kernel string at position {pos}: {self.text!r}")
            kind = m.lastgroup
            self.toks.append((kind, m.group(kind)))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None, kind=None):
        k, v = self.peek()
        if k is None or (value is not None and v != value) or (kind is not None and k != kind):
            want = value or kind
            raise SpecError(f"expected {want!r} but found {v!r} in kernel string {self.text!r}")
        self.i += 1
        return v

    def spec(self) -> KernelSpec:
        name = self.take(kind="name").lower()
        if name == "linear":
            if self.peek()[1] == "(":
                self.take("(")
                self.take(")")
            return Linear()
        if name in ("poly", "polynomial"):
            self.take("(")
            self.take("k")
            self.take("=")
            k = self.take(kind="num")
            self.take(")")
            try:
                order = int(k)
            except ValueError:
                raise SpecError(f"polynomial order must be an integer, got {k!r}") from None
            return Polynomial(order)
        if name == "gaussian":
            self.take("(")
            bw = None
            if self.peek()[1] == "b":
                self.take("b")
                self.take("=")
                k, v = self.peek()
                if k == "name" and v == "median":
                    self.take("median")
                else:
                    bw = float(self.take(kind="num"))
            self.take(")")
            return Gaussian(bw)
        if name == "add":
            self.take("(")
            comps = [self.component()]
            while self.peek()[1] == ",":
                self.take(",")
                comps.append(self.component())
            self.take(")")
            return Additive(tuple(comps))
        raise SpecError(f"unknown kernel {name!r}")

    def component(self):
        self.take("[")
        idx = [int(self.take(kind="num"))]
        while self.peek()[1] == ",":
            self.take(",")
            idx.append(int(self.take(kind="num")))
        self.take("]")
        self.take(":")
        return tuple(idx), self.spec()


def parse_kernel(text: str) -> KernelSpec:
    """Parse the kernel-string grammar described in the module docstring."""
    p = _Parser(text)
    spec = p.spec()
    if p.i != len(p.toks):
        raise SpecError(f"trailing input in kernel string {text!r}")
    return spec


def format_kernel(spec: KernelSpec) -> str:
    """Canonical string form of ``spec``; inverse of :func:`parse_kernel`."""
    if isinstance(spec, Linear):
        return "linear"
    if isinstance(spec, Polynomial):
        return f"poly(k={spec.order})"
    if isinstance(spec, Gaussian):
        return "gaussian()" if spec.bandwidth is None else f"gaussian(b={spec.bandwidth!r})"
    if isinstance(spec, Additive):
        parts = ", ".join(
            "[" + ",".join(str(i) for i in idx) + "]:" + format_kernel(sub)
            for idx, sub in spec.components
        )
        return f"add({parts})"
    raise SpecError(f"unknown kernel spec {spec!r}")


def linear_block(spec: KernelSpec) -> Tuple[int, ...] | None:
    """Coordinates carried by a pure ``Linear`` component of an additive spec."""
    if isinstance(spec, Additive):
        for idx, sub in spec.components:
            if isinstance(sub, Linear):
                return idx
    return None


# ---------------------------------------------------------------------------
# eigen-analysis


@dataclass(frozen=True)
class GramEigen:
    """Gram matrix with the eigendecomposition of ``gram / n``.

    ``eigvals`` are nonincreasing and clamped at zero; ``eigvecs`` holds the
    matching orthonormal columns.
    """

    gram: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    n: int

    @property
    def positive(self) -> np.ndarray:
        """Mask of eigenvalues treated as nonzero (``> RANK_RTOL * largest``)."""
        top = self.eigvals[0] if self.eigvals.size else 0.0
        if top <= 0:
            return np.zeros_like(self.eigvals, dtype=bool)
        return self.eigvals > RANK_RTOL * top

    @property
    def rank(self) -> int:
        return int(self.positive.sum())


def eigendecompose(gram_matrix, n: int | None = None) -> GramEigen:
    """Eigendecompose ``gram_matrix / n`` (``n`` defaults to the row count)."""
    G = np.asarray(gram_matrix, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InputError(f"gram must be square, got shape {G.shape}")
    if n is None:
        n = G.shape[0]
    scale = max(1.0, float(np.max(np.abs(G)))) if G.size else 1.0
    asym = float(np.max(np.abs(G - G.T))) if G.size else 0.0
    if asym > 1e-12 * scale:
        raise InputError(f"gram is not symmetric (max asymmetry {asym:.3e})")
    G = 0.5 * (G + G.T)
    try:
        w, U = sla.eigh(G / n, driver="evd")
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(G) if G.shape[0] <= 2000 else float("nan")
        raise NumericError(f"eigensolver failed ({exc}); condition number ~ {cond:.3e}") from exc
    w = w[::-1].copy()
    U = U[:, ::-1].copy()
    top = max(w[0], 0.0) if w.size else 0.0
    if w.size and w[-1] < -max(1e-8 * top, 1e-10):
        raise NumericError(
            f"gram is not positive semidefinite: smallest eigenvalue {w[-1]:.3e} (largest {top:.3e})"
        )
    np.clip(w, 0.0, None, out=w)
    return GramEigen(gram=G, eigvals=w, eigvecs=U, n=int(n))


def effective_dim(ge: GramEigen, eta: float) -> float:
    """Effective dimension ``sum_v mu_v / (mu_v + eta)`` over the nonzero spectrum."""
    if not eta > 0:
        raise InputError(f"eta must be positive, got {eta!r}")
    mu = ge.eigvals[ge.positive]
    return float(np.sum(mu / (mu + eta)))


def nystrom_from_cross(ge: GramEigen, kx: np.ndarray) -> np.ndarray:
    """Nystrom eigenfunctions for every retained component.

    ``kx`` is the ``(n, m)`` cross-kernel block between the ``n`` anchor points
    and ``m`` evaluation points. Returns an ``(r, m)`` array whose row ``v`` is
    ``phi_v(x) = sqrt(n) * U[:, v]' kx / (n * mu_v)``.
    """
    kx = np.asarray(kx, dtype=float)
    if kx.ndim == 1:
        kx = kx[:, None]
    if kx.shape[0] != ge.eigvecs.shape[0]:
        raise InputError(f"cross-kernel has {kx.shape[0]} rows, expected {ge.eigvecs.shape[0]}")
    keep = ge.positive
    U = ge.eigvecs[:, keep]
    mu = ge.eigvals[keep]
    n = ge.n
    return (np.sqrt(n) / n) * (U.T @ kx) / mu[:, None]


def nystrom_phi(ge: GramEigen, spec: KernelSpec, points, nu: int, x) -> float:
    """Empirical eigenfunction ``phi_nu`` (0-based) extended to ``x``."""
    if nu < 0 or nu >= ge.eigvals.size:
        raise InputError(f"eigen index {nu} out of range")
    mu = ge.eigvals[nu]
    if not ge.positive[nu]:
        raise DegenerateError(f"eigenvalue {nu} is zero ({mu:.3e}); no eigenfunction to extend")
    kx = cross_gram(spec, points, np.atleast_1d(np.asarray(x, dtype=float))[None, :])[:, 0]
    n = ge.n
    return float(np.sqrt(n) * (ge.eigvecs[:, nu] @ kx) / (n * mu))


def regularized_from_cross(ge: GramEigen, kx: np.ndarray, eta: float) -> np.ndarray:
    """``sum_v phi_v(x)^2 / (1 + eta / mu_v)^2`` for each column of ``kx``."""
    if not eta > 0:
        raise InputError(f"eta must be positive, got {eta!r}")
    phi = nystrom_from_cross(ge, kx)
    mu = ge.eigvals[ge.positive]
    w = (mu / (mu + eta)) ** 2
    return w @ (phi**2)


def regularized_kernel_value(ge: GramEigen, spec: KernelSpec, points, eta: float, x0) -> float:
    """Plug-in value of the regularized kernel norm ``V(K_x0, K_x0)`` at ``x0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    kx = cross_gram(spec, points, x0[None, :])
    return float(regularized_from_cross(ge, kx, eta)[0])


def with_bandwidth(spec: KernelSpec, bandwidth: float) -> KernelSpec:
    """Copy of ``spec`` with every gaussian bandwidth set to ``bandwidth``."""
    if isinstance(spec, Gaussian):
        return replace(spec, bandwidth=bandwidth)
    if isinstance(spec, Additive):
        return Additive(tuple((idx, with_bandwidth(sub, bandwidth)) for idx, sub in spec.components))
    return spec
