import numpy as np
import pytest

from helpers import homo_dense_solve, random_panel, with_Y
from ifekrr.errors import InputError, ResourceError
from ifekrr.homo import (
    fit_homo,
    fit_homo_gcv,
    gcv_homo,
    objective_homo,
    predict_homo,
    sigma_eps_homo,
    smoother_matrix_homo,
)
from ifekrr.kernels import Gaussian, Linear, Polynomial, cross_gram
from ifekrr.panel import PanelData, build_Z, ols, projection_P
from ifekrr.profiled import apply_blocks

G1 = Gaussian(1.0)


def test_P_invariants():
    panel = random_panel(N=3, T=9, d=2, q1=2, seed=1)
    fit = fit_homo(panel, G1, 0.05)
    P, Z = fit.P, fit.Z
    assert np.max(np.abs(P - P.T)) <= 1e-10
    assert np.max(np.abs(P @ P - P)) <= 1e-10
    assert np.max(np.abs(P @ Z)) <= 1e-10
    assert np.trace(P) == pytest.approx(9 - 4, abs=1e-8)


def test_printed_nonsymmetric_system():
    panel = random_panel(N=4, T=7, d=1, q1=2, seed=2)
    eta = 0.01
    fit = fit_homo(panel, G1, eta)
    n = panel.N * panel.T
    y = panel.Y.reshape(-1)
    PN = np.kron(np.eye(panel.N), fit.P)
    resid = (PN @ fit.K + n * eta * np.eye(n)) @ fit.a - PN @ y
    assert np.max(np.abs(resid)) <= 1e-8 * np.max(np.abs(y))


def test_large_eta_gives_ols():
    panel = random_panel(N=3, T=8, q1=2, seed=3)
    fit = fit_homo(panel, G1, 1e8)
    assert np.max(np.abs(fit.g_fitted)) < 1e-6
    Z = build_Z(panel)
    for i in range(3):
        np.testing.assert_allclose(fit.betas[i], ols(Z, panel.Y[i]), rtol=1e-4, atol=1e-8)


def test_dense_oracle_small_NT():
    rng = np.random.default_rng(4)
    for rep in range(20):
        N = int(rng.integers(2, 5))
        T = int(rng.integers(3, 20 // N + 1))
        panel = random_panel(N=N, T=T, d=1, q1=1, seed=200 + rep)
        eta = float(10 ** rng.uniform(-2, 0))
        fit = fit_homo(panel, G1, eta)
        y = panel.Y.reshape(-1)
        a = homo_dense_solve(fit.K, fit.P, N, y, eta)
        # the Gram is near-singular, so compare the identified quantities
        np.testing.assert_allclose(fit.K @ fit.a, fit.K @ a, atol=1e-7)
        assert objective_homo(fit.K, fit.P, N, y, fit.a, eta) == pytest.approx(
            objective_homo(fit.K, fit.P, N, y, a, eta), abs=1e-7)


def test_linear_kernel_exact_recovery():
    rng = np.random.default_rng(5)
    N, T = 4, 10
    X = rng.normal(size=(N, T, 2))
    slope = np.array([1.5, -0.7])
    Y = X @ slope
    panel = PanelData(Y=Y, X=X, F1=np.ones((T, 1)))
    fit = fit_homo(panel, Linear(), 1e-8)
    np.testing.assert_allclose(fit.g_fitted.reshape(N, T), Y, atol=1e-3)
    np.testing.assert_allclose(fit.fitted, Y, atol=1e-3)


def test_predict_checks():
    panel = random_panel(N=2, T=6, seed=6)
    fit = fit_homo(panel, G1, 0.1)
    pts = panel.stacked_points()
    assert predict_homo(fit, panel, pts[7]) == pytest.approx(fit.g_fitted[7], abs=1e-12)
    zero = fit.__class__(**{**fit.__dict__, "a": np.zeros_like(fit.a)})
    assert predict_homo(zero, panel, [0.3]) == 0.0
    x = np.array([0.25])
    hand = sum(a * np.exp(-(p[0] - x[0]) ** 2) for a, p in zip(fit.a, pts))
    assert predict_homo(fit, panel, x) == pytest.approx(hand, abs=1e-12)
    xs = np.linspace(-1, 1, 4)[:, None]
    np.testing.assert_allclose(predict_homo(fit, panel, xs), cross_gram(G1, pts, xs).T @ fit.a)
    with pytest.raises(InputError):
        predict_homo(fit, panel, [0.1, 0.2])


def test_smoother_reproduces_fits():
    panel = random_panel(N=3, T=6, d=1, q1=2, seed=7)
    B = smoother_matrix_homo(panel, G1, 0.03)
    n = panel.N * panel.T
    rng = np.random.default_rng(8)
    for _ in range(5):
        Y = rng.normal(size=panel.Y.shape)
        fit = fit_homo(with_Y(panel, Y), G1, 0.03)
        np.testing.assert_allclose(B @ Y.reshape(-1), fit.fitted.reshape(-1), atol=1e-8)
    assert 0 < np.trace(B) < n


def test_smoother_limit_is_blockwise_ols_hat():
    panel = random_panel(N=3, T=6, q1=2, seed=9)
    B = smoother_matrix_homo(panel, G1, 1e9)
    Z = build_Z(panel)
    Q = np.kron(np.eye(3), np.eye(6) - projection_P(Z))
    np.testing.assert_allclose(B, Q, atol=1e-6)


def test_spectral_gcv_matches_explicit_smoother():
    panel = random_panel(N=3, T=7, d=1, q1=2, seed=10)
    grid = np.logspace(-4, 1, 8)
    _, res = gcv_homo(panel, G1, grid, refine=False)
    y = panel.Y.reshape(-1)
    n = y.size
    for eta, value in zip(grid, res.values):
        B = smoother_matrix_homo(panel, G1, eta)
        r = y - B @ y
        assert value == pytest.approx(r @ r / (n * (1 - np.trace(B) / n) ** 2), rel=1e-8)


def test_profile_consistency():
    panel = random_panel(N=4, T=8, d=2, q1=2, seed=11)
    fit = fit_homo(panel, Polynomial(3), 0.02)
    R = panel.Y - fit.g_fitted.reshape(4, 8)
    for i in range(4):
        np.testing.assert_allclose(ols(fit.Z, R[i]), fit.betas[i], atol=1e-10)


def test_objective_descent():
    panel = random_panel(N=3, T=8, q1=2, seed=12)
    eta = 0.05
    fit = fit_homo(panel, G1, eta)
    y = panel.Y.reshape(-1)
    at_fit = objective_homo(fit.K, fit.P, 3, y, fit.a, eta)
    at_zero = objective_homo(fit.K, fit.P, 3, y, np.zeros_like(fit.a), eta)
    assert at_fit < at_zero
    rng = np.random.default_rng(13)
    for _ in range(200):
        da = rng.normal(scale=0.05, size=fit.a.shape)
        assert objective_homo(fit.K, fit.P, 3, y, fit.a + da, eta) >= at_fit - 1e-14


def test_objective_descent_not_strict_in_factor_span():
    panel = random_panel(N=2, T=6, q1=2, seed=14)
    Z = build_Z(panel)
    Y = np.vstack([Z @ [1.0, 0.5, -1.0], Z @ [0.2, -0.3, 2.0]])
    p = with_Y(panel, Y)
    fit = fit_homo(p, G1, 0.05)
    assert np.max(np.abs(fit.a)) < 1e-10
    assert sigma_eps_homo(fit, p) == pytest.approx(0.0, abs=1e-20)


def test_permutation_equivariance():
    panel = random_panel(N=4, T=6, d=1, q1=2, seed=15)
    fit = fit_homo(panel, G1, 0.04)
    perm = [2, 0, 3, 1]
    moved = PanelData(Y=panel.Y[perm], X=panel.X[perm], F1=panel.F1)
    other = fit_homo(moved, G1, 0.04)
    np.testing.assert_allclose(other.a.reshape(4, 6), fit.a.reshape(4, 6)[perm], atol=1e-10)
    np.testing.assert_allclose(other.betas, fit.betas[perm], atol=1e-10)


def test_nt_cap():
    panel = random_panel(N=5, T=6, seed=16)
    with pytest.raises(ResourceError):
        fit_homo(panel, G1, 0.1, cap=20)
    with pytest.raises(ResourceError):
        fit_homo_gcv(panel, G1, cap=29)
    fit_homo(panel, G1, 0.1, cap=30)


def test_sigma_eps():
    panel = random_panel(N=3, T=7, q1=2, seed=17)
    fit = fit_homo(panel, G1, 0.1)
    R = panel.Y - fit.g_fitted.reshape(3, 7)
    hand = sum(R[i] @ fit.P @ R[i] for i in range(3)) / (3 * (7 - 3))
    assert sigma_eps_homo(fit, panel) == pytest.approx(hand, rel=1e-12)
    assert fit.sigma_eps_sq == pytest.approx(hand, rel=1e-12)
    # residual in null(P): Y_i = tau_i g + Z c_i
    Z = build_Z(panel)
    Y = fit.g_fitted.reshape(3, 7) + np.vstack([Z @ [1.0, 2.0, 0.0]] * 3)
    assert sigma_eps_homo(fit, with_Y(panel, Y)) == pytest.approx(0.0, abs=1e-12)


def test_gcv_one_point_and_curve():
    panel = random_panel(N=3, T=8, seed=18)
    eta, _ = gcv_homo(panel, G1, [0.2])
    assert eta == 0.2
    eta, res = gcv_homo(panel, G1)
    assert len(res.curve()) == 40
    assert np.all(np.isfinite(res.values)) and np.all(res.values > 0)
    fit = fit_homo_gcv(panel, G1)
    assert fit.eta == eta and fit.gcv is not None


def test_gcv_eta_scale():
    panel = random_panel(N=3, T=8, seed=19)
    eta, _ = gcv_homo(panel, G1)
    fit = fit_homo_gcv(panel, G1, eta_scale=0.1)
    assert fit.eta == pytest.approx(0.1 * eta, rel=1e-15)


def test_gcv_refinement_stays_in_bracketing_cell():
    panel = random_panel(N=4, T=10, seed=20)
    _, res = gcv_homo(panel, G1)
    k = int(np.searchsorted(res.grid, res.grid_eta))
    lo, hi = res.grid[max(k - 1, 0)], res.grid[min(k + 1, res.grid.size - 1)]
    assert lo <= res.eta <= hi
    assert np.interp(np.log(res.eta), np.log(res.grid), res.values) >= 0


def test_gcv_pure_noise_prefers_heavy_smoothing():
    hits = 0
    for rep in range(100):
        rng = np.random.default_rng(3000 + rep)
        N, T = 5, 10
        panel = PanelData(Y=rng.normal(size=(N, T)), X=rng.uniform(size=(N, T, 1)),
                          F1=np.ones((T, 1)))
        _, res = gcv_homo(panel, Polynomial(3), refine=False)
        hits += int(np.argmin(res.values) >= res.grid.size - 2)
    assert hits >= 90


def test_degenerate_T_rejected():
    with pytest.raises(InputError):
        fit_homo(random_panel(N=2, T=2, d=1, q1=1, seed=21), G1, 0.1)


def test_bad_eta():
    panel = random_panel(N=2, T=6, seed=22)
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(InputError):
            fit_homo(panel, G1, bad)


def test_apply_blocks_matches_kron():
    rng = np.random.default_rng(23)
    P = projection_P(np.column_stack([np.ones(5), rng.normal(size=5)]))
    A = rng.normal(size=(15, 4))
    np.testing.assert_allclose(apply_blocks(P, A, 3), np.kron(np.eye(3), P) @ A, atol=1e-14)
