import numpy as np

from ifekrr.panel import PanelData


def random_panel(N=3, T=6, d=1, q1=1, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, T, d))
    F1 = np.column_stack([np.ones(T), rng.normal(size=(T, q1 - 1))])
    Y = scale * (np.sin(X.sum(axis=2)) + rng.normal(size=(N, T)))
    return PanelData(Y=Y, X=X, F1=F1)


def with_Y(panel, Y):
    return PanelData(Y=Y, X=panel.X, F1=panel.F1)


def hetero_dense_solve(K, Z, y, eta):
    """Stationary point of (1/2T)||y - K a - Z b||^2 + (eta/2) a'K a by a dense solve."""
    T = len(y)
    q = Z.shape[1]
    H = np.zeros((T + q, T + q))
    H[:T, :T] = K @ K / T + eta * K
    H[:T, T:] = K @ Z / T
    H[T:, :T] = Z.T @ K / T
    H[T:, T:] = Z.T @ Z / T
    rhs = np.concatenate([K @ y, Z.T @ y]) / T
    theta = np.linalg.solve(H, rhs)
    return theta[:T], theta[T:]


def homo_dense_solve(K, P, N, y, eta):
    """Stationary point of (1/2n)(y-Ka)'P_N(y-Ka) + (eta/2) a'K a by a dense solve."""
    n = len(y)
    PN = np.kron(np.eye(N), P)
    H = K @ PN @ K / n + eta * K
    rhs = K @ PN @ y / n
    return np.linalg.solve(H, rhs)
