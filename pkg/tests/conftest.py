"""Shared builders for randomized test systems."""
import numpy as np

from resobs.linsys import DiscreteLinearSystem, build_horizon_operators, is_observable


def slow_scalar_system(rng, m=2, T=8):
    """Scalar plant with a near-unit mode; its tall window stack spreads
    observability energy across rows, which keeps the annihilator's
    restricted-isometry constant small."""
    a = rng.uniform(0.9, 1.0)
    C = rng.uniform(0.5, 1.5, size=(m, 1)) * rng.choice([-1.0, 1.0], size=(m, 1))
    sys_d = DiscreteLinearSystem(A=np.array([[a]]), B=np.zeros((1, 0)), C=C, D=np.zeros((m, 0)), dt=0.1)
    return sys_d, build_horizon_operators(sys_d, T)


def random_observable_system(rng, n, m, n_inputs=0, with_feedthrough=False):
    """Stable discrete system with an observable (A, C) pair."""
    while True:
        A = rng.normal(size=(n, n))
        A = A / (1.3 * max(1e-9, np.max(np.abs(np.linalg.eigvals(A)))))
        C = rng.normal(size=(m, n))
        if is_observable(A, C):
            break
    B = rng.normal(size=(n, n_inputs)) if n_inputs else np.zeros((n, 0))
    if n_inputs and with_feedthrough:
        D = rng.normal(size=(m, n_inputs))
    else:
        D = np.zeros((m, n_inputs))
    return DiscreteLinearSystem(A=A, B=B, C=C, D=D, dt=0.1)


def simulate_measurements(sys_d, x0, T, u=None, attack=None):
    """Roll the plant forward; attack is an optional (T, m) additive array."""
    n_inputs = sys_d.B.shape[1]
    if u is None:
        u = np.zeros((T, n_inputs))
    x = np.asarray(x0, dtype=float).copy()
    Y = np.zeros((T, sys_d.C.shape[0]))
    for k in range(T):
        Y[k] = sys_d.C @ x + sys_d.D @ u[k]
        x = sys_d.A @ x + sys_d.B @ u[k]
    if attack is not None:
        Y = Y + attack
    return Y, u
