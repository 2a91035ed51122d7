import numpy as np
import pytest
import scipy.signal

from conftest import random_observable_system, simulate_measurements
from resobs.errors import AnnihilatorUnavailableError, InvalidModelError
from resobs.linsys import (
    ContinuousLinearSystem,
    DiscreteLinearSystem,
    build_horizon_operators,
    discretize,
    is_observable,
    measurement_offset,
    propagate_estimate,
    stack_window,
)


def test_scalar_zoh_closed_form():
    # dx = -x + u sampled at 0.5: A = e^{-0.5}, B = 1 - e^{-0.5}
    sys_c = ContinuousLinearSystem(
        A=np.array([[-1.0]]),
        B=np.array([[1.0]]),
        C=np.array([[1.0]]),
        D=np.array([[0.0]]),
    )
    sys_d = discretize(sys_c, 0.5)
    assert abs(sys_d.A[0, 0] - np.exp(-0.5)) < 1e-12
    assert abs(sys_d.B[0, 0] - (1.0 - np.exp(-0.5))) < 1e-12
    assert sys_d.dt == 0.5


def test_discretize_matches_scipy_zoh():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n, p = 4, 2
        A = rng.normal(size=(n, n)) - 2.0 * np.eye(n)
        B = rng.normal(size=(n, p))
        C = rng.normal(size=(3, n))
        D = np.zeros((3, p))
        dt = 0.07
        sys_d = discretize(ContinuousLinearSystem(A=A, B=B, C=C, D=D), dt)
        Ad, Bd, _, _, _ = scipy.signal.cont2discrete((A, B, C, D), dt, method="zoh")
        assert np.max(np.abs(sys_d.A - Ad)) < 1e-10
        assert np.max(np.abs(sys_d.B - Bd)) < 1e-10


def test_discretize_rejects_bad_dt():
    sys_c = ContinuousLinearSystem(
        A=np.array([[-1.0]]), B=np.array([[1.0]]), C=np.array([[1.0]]), D=np.array([[0.0]])
    )
    with pytest.raises(Exception):
        discretize(sys_c, 0.0)


def test_stacking_consistency_no_feedthrough():
    rng = np.random.default_rng(1)
    sys_d = random_observable_system(rng, n=3, m=2, n_inputs=2)
    T = 6
    x0 = rng.normal(size=3)
    u = rng.normal(size=(T, 2))
    Y, _ = simulate_measurements(sys_d, x0, T, u)
    ops = build_horizon_operators(sys_d, T)
    y_stack = stack_window(Y, T, 2, "measurement")
    u_stack = stack_window(u[:-1], T - 1, 2, "input")
    model = ops.Phi @ x0 + ops.H @ u_stack
    assert np.max(np.abs(y_stack - model)) < 1e-10


def test_stacking_consistency_with_feedthrough():
    # the newest sample's direct term rides outside H, via measurement_offset
    rng = np.random.default_rng(2)
    sys_d = random_observable_system(rng, n=3, m=3, n_inputs=2, with_feedthrough=True)
    T = 5
    x0 = rng.normal(size=3)
    u = rng.normal(size=(T, 2))
    Y, _ = simulate_measurements(sys_d, x0, T, u)
    ops = build_horizon_operators(sys_d, T)
    y_stack = stack_window(Y, T, 3, "measurement")
    u_stack = stack_window(u[:-1], T - 1, 2, "input")
    offset = measurement_offset(ops, u_stack, u[-1])
    model = ops.Phi @ x0 + offset
    assert np.max(np.abs(y_stack - model)) < 1e-10


def test_annihilator_kills_observability_map():
    rng = np.random.default_rng(3)
    for trial in range(50):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 5))
        T = n + int(rng.integers(0, 4))
        if m * T <= n:
            continue
        sys_d = random_observable_system(rng, n=n, m=m)
        ops = build_horizon_operators(sys_d, T)
        assert np.max(np.abs(ops.F @ ops.Phi)) < 1e-10
        assert np.linalg.matrix_rank(ops.Phi) == n
        # rows form an orthonormal basis of the left null space
        assert ops.F.shape == (m * T - n, m * T)
        gram = ops.F @ ops.F.T
        assert np.max(np.abs(gram - np.eye(m * T - n))) < 1e-10


def test_annihilator_empty_without_redundancy():
    # m*T == n leaves a rank-complete Phi but a zero-row annihilator;
    # decoding is then impossible and the decoders reject such windows
    rng = np.random.default_rng(4)
    sys_d = random_observable_system(rng, n=3, m=1)
    ops = build_horizon_operators(sys_d, 3)
    assert ops.F.shape == (0, 3)
    from resobs.csdecode import l1_decode

    with pytest.raises(InvalidModelError):
        l1_decode(np.zeros((3, 1)), ops, np.zeros((2, 0)))


def test_horizon_shorter_than_state_dimension_raises():
    rng = np.random.default_rng(6)
    sys_d = random_observable_system(rng, n=4, m=2)
    with pytest.raises(AnnihilatorUnavailableError):
        build_horizon_operators(sys_d, 2)


def test_annihilator_unavailable_when_unobservable():
    A = np.diag([0.5, 0.6])
    C = np.array([[1.0, 0.0]])  # second state invisible
    sys_d = DiscreteLinearSystem(A=A, B=np.zeros((2, 0)), C=C, D=np.zeros((1, 0)), dt=1.0)
    with pytest.raises(AnnihilatorUnavailableError):
        build_horizon_operators(sys_d, 4)
    ops = build_horizon_operators(sys_d, 4, allow_missing_annihilator=True)
    assert ops.F is None


def test_is_observable():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert is_observable(A, np.array([[1.0, 0.0]]))
    assert not is_observable(A, np.array([[0.0, 1.0]]))


def test_propagate_estimate_matches_rollout():
    rng = np.random.default_rng(5)
    sys_d = random_observable_system(rng, n=4, m=2, n_inputs=1)
    T = 7
    x0 = rng.normal(size=4)
    u = rng.normal(size=(T, 1))
    x = x0.copy()
    for k in range(T - 1):
        x = sys_d.A @ x + sys_d.B @ u[k]
    x_prop = propagate_estimate(sys_d, x0, stack_window(u[:-1], T - 1, 1, "input"))
    assert np.max(np.abs(x_prop - x)) < 1e-10
    # row form accepted too
    assert np.max(np.abs(propagate_estimate(sys_d, x0, u[:-1]) - x)) < 1e-10


def test_stack_window_shape_errors():
    with pytest.raises(InvalidModelError):
        stack_window(np.zeros((3, 2)), 4, 2, "measurement")
    with pytest.raises(InvalidModelError):
        stack_window(np.zeros((3, 2)), 3, 1, "measurement")
