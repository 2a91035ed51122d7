"""Discrete-time linear models and stacked measurement operators.

The estimation pipeline works on fixed-length measurement windows of a
sampled linear system

    x[k+1] = A x[k] + B u[k]
    y[k]   = C x[k] + D u[k] + e[k]

where e collects per-channel measurement corruptions.  This module builds the
window operators: the observability stack Phi, the input-convolution map H,
and an orthonormal annihilator F with F Phi = 0 that removes the state from
the stacked measurement equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import AnnihilatorUnavailableError, InvalidModelError

# Relative cutoff on singular values when deciding numerical rank.
RANK_RTOL = 1e-10


def _as_matrix(name: str, value, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise InvalidModelError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidModelError(f"{name} contains non-finite entries")
    if rows is not None and arr.shape[0] != rows:
        raise InvalidModelError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise InvalidModelError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    return arr


@dataclass
class ContinuousLinearSystem:
    """Continuous-time model (A, B, C, D) with y = C x + D u + e."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        self.A = _as_matrix("A", self.A)
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise InvalidModelError(f"A must be square, got {self.A.shape}")
        self.B = _as_matrix("B", self.B, rows=n)
        self.C = _as_matrix("C", self.C, cols=n)
        m = self.C.shape[0]
        self.D = _as_matrix("D", self.D, rows=m, cols=self.B.shape[1])

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass
class DiscreteLinearSystem:
    """Sampled model; dt records the sampling period used to produce it."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        self.A = _as_matrix("A", self.A)
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise InvalidModelError(f"A must be square, got {self.A.shape}")
        self.B = _as_matrix("B", self.B, rows=n)
        self.C = _as_matrix("C", self.C, cols=n)
        m = self.C.shape[0]
        self.D = _as_matrix("D", self.D, rows=m, cols=self.B.shape[1])
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidModelError(f"dt must be a positive finite number, got {self.dt}")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


def discretize(sys_c: ContinuousLinearSystem, dt: float) -> DiscreteLinearSystem:
    """Zero-order-hold discretization via the augmented matrix exponential.

    expm([[A, B], [0, 0]] * dt) = [[Ad, Bd], [0, I]], so both discrete
    matrices come out of one scaling-and-squaring call.  C and D are
    unchanged by ZOH sampling.
    """
    if not (np.isfinite(dt) and dt > 0):
        raise InvalidModelError(f"dt must be a positive finite number, got {dt}")
    n, l = sys_c.n_states, sys_c.n_inputs
    aug = np.zeros((n + l, n + l))
    aug[:n, :n] = sys_c.A
    aug[:n, n:] = sys_c.B
    phi = scipy.linalg.expm(aug * dt)
    Ad = phi[:n, :n]
    Bd = phi[:n, n:]
    return DiscreteLinearSystem(A=Ad, B=Bd, C=sys_c.C.copy(), D=sys_c.D.copy(), dt=dt)


def is_observable(A: np.ndarray, C: np.ndarray, rank_rtol: float = RANK_RTOL) -> bool:
    """Kalman rank test on [C; CA; ...; CA^(n-1)] with a relative SVD cutoff."""
    A = _as_matrix("A", A)
    n = A.shape[0]
    C = _as_matrix("C", C, cols=n)
    blocks = []
    Ck = C
    for _ in range(n):
        blocks.append(Ck)
        Ck = Ck @ A
    obs = np.vstack(blocks)
    sv = np.linalg.svd(obs, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return n == 0
    return int(np.sum(sv > rank_rtol * sv[0])) == n


@dataclass
class HorizonOperators:
    """Stacked-window operators for a horizon of T samples.

    Phi:      (m*T, n)       observability stack [C; CA; ...; CA^(T-1)]
    H:        (m*T, l*(T-1)) input convolution; block (i, j) is C A^(i-1-j) B
                             below the diagonal and D on the diagonal (the
                             newest sample has no input column, see
                             measurement_offset)
    F:        (m*T - n, m*T) orthonormal-row annihilator with F Phi = 0,
                             None when unavailable and allow_missing was set
    Phi_last: (m, n)         bottom block row of Phi, i.e. C A^(T-1)
    H_last:   (m, l*(T-1))   bottom block row of H
    G:        (n, l*(T-1))   propagation map [A^(T-2) B, ..., A B, B]
    A_pow:    (n, n)         A^(T-1), pairs with G to roll estimates forward
    """

    Phi: np.ndarray
    H: np.ndarray
    F: np.ndarray | None
    Phi_last: np.ndarray
    H_last: np.ndarray
    G: np.ndarray
    A_pow: np.ndarray
    D: np.ndarray
    T: int
    n: int
    m: int
    l: int

    @property
    def rows(self) -> int:
        return self.m * self.T


def build_horizon_operators(
    sys_d: DiscreteLinearSystem,
    T: int,
    allow_missing_annihilator: bool = False,
    rank_rtol: float = RANK_RTOL,
) -> HorizonOperators:
    """Build Phi(T), H(T), the annihilator F_T, and the propagation map G.

    Matrix powers are accumulated by repeated multiplication (T is small).
    The annihilator is the transpose of the trailing left-singular block of
    Phi(T); it requires T >= n and an observable pair so that rank(Phi) = n.
    """
    if T < 1:
        raise InvalidModelError(f"horizon must be >= 1, got {T}")
    n, m, l = sys_d.n_states, sys_d.n_outputs, sys_d.n_inputs
    A, B, C, D = sys_d.A, sys_d.B, sys_d.C, sys_d.D

    powers = [np.eye(n)]
    for _ in range(T - 1):
        powers.append(powers[-1] @ A)

    Phi = np.vstack([C @ powers[i] for i in range(T)])

    H = np.zeros((m * T, l * (T - 1)))
    for i in range(T):
        for j in range(T - 1):
            if i == j:
                block = D
            elif i > j:
                block = C @ powers[i - 1 - j] @ B
            else:
                continue
            H[i * m : (i + 1) * m, j * l : (j + 1) * l] = block

    G = np.zeros((n, l * (T - 1)))
    for j in range(T - 1):
        G[:, j * l : (j + 1) * l] = powers[T - 2 - j] @ B

    F = None
    U, sv, _ = np.linalg.svd(Phi, full_matrices=True)
    rank = int(np.sum(sv > rank_rtol * sv[0])) if sv.size and sv[0] > 0 else 0
    if T >= n and rank == n:
        F = U[:, rank:].T.copy()
    elif not allow_missing_annihilator:
        raise AnnihilatorUnavailableError(
            f"no annihilator for T={T}, n={n}: "
            + ("horizon shorter than the state dimension" if T < n else f"rank(Phi)={rank} < n")
        )

    return HorizonOperators(
        Phi=Phi,
        H=H,
        F=F,
        Phi_last=Phi[(T - 1) * m :, :].copy(),
        H_last=H[(T - 1) * m :, :].copy(),
        G=G,
        A_pow=powers[T - 1].copy(),
        D=D.copy(),
        T=T,
        n=n,
        m=m,
        l=l,
    )


def stack_window(window: np.ndarray, length: int, width: int, name: str) -> np.ndarray:
    """Accept a (length, width) array or an already-stacked vector."""
    arr = np.asarray(window, dtype=float)
    if arr.ndim == 2:
        if arr.shape != (length, width):
            raise InvalidModelError(f"{name} window must have shape ({length}, {width}), got {arr.shape}")
        return arr.reshape(-1)
    if arr.ndim == 1:
        if arr.size != length * width:
            raise InvalidModelError(f"{name} stack must have {length * width} entries, got {arr.size}")
        return arr.copy()
    raise InvalidModelError(f"{name} window must be 1-D or 2-D, got ndim={arr.ndim}")


def measurement_offset(ops: HorizonOperators, u_stack: np.ndarray, u_curr: np.ndarray | None = None) -> np.ndarray:
    """Input contribution to the stacked window: H u plus the newest sample's
    feedthrough D u_curr, which has no column inside H."""
    offset = ops.H @ u_stack
    if u_curr is not None:
        u_curr = np.asarray(u_curr, dtype=float).reshape(-1)
        if u_curr.size != ops.l:
            raise InvalidModelError(f"u_curr must have {ops.l} entries, got {u_curr.size}")
        offset[(ops.T - 1) * ops.m :] += ops.D @ u_curr
    return offset


def propagate_estimate(
    sys_d: DiscreteLinearSystem, x_hat_past: np.ndarray, u_window: np.ndarray
) -> np.ndarray:
    """Roll a window-start estimate forward through the known inputs:
    x[k] = A^(T-1) x[k-T+1] + sum_j A^(T-2-j) B u[k-T+1+j]."""
    x = np.asarray(x_hat_past, dtype=float).reshape(-1)
    if x.size != sys_d.n_states:
        raise InvalidModelError(f"state must have {sys_d.n_states} entries, got {x.size}")
    u = np.asarray(u_window, dtype=float)
    if u.ndim == 1:
        if u.size % sys_d.n_inputs:
            raise InvalidModelError("stacked input window length is not a multiple of the input dimension")
        u = u.reshape(-1, sys_d.n_inputs)
    for k in range(u.shape[0]):
        x = sys_d.A @ x + sys_d.B @ u[k]
    return x


def simulate_window(
    sys_d: DiscreteLinearSystem,
    x0: np.ndarray,
    u_window: np.ndarray,
    u_curr: np.ndarray | None = None,
) -> np.ndarray:
    """Forward-simulate T measurements from x0 under the given inputs.

    u_window holds the T-1 inputs applied inside the window; u_curr is the
    input at the newest sample (only its feedthrough matters).  Returns the
    stacked clean measurement vector of length m*T with T = len(u_window)+1.
    """
    u = np.asarray(u_window, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, sys_d.n_inputs)
    T = u.shape[0] + 1
    x = np.asarray(x0, dtype=float).reshape(-1)
    ys = []
    for k in range(T):
        if k < T - 1:
            uk = u[k]
        elif u_curr is not None:
            uk = np.asarray(u_curr, dtype=float).reshape(-1)
        else:
            uk = np.zeros(sys_d.n_inputs)
        ys.append(sys_d.C @ x + sys_d.D @ uk)
        if k < T - 1:
            x = sys_d.A @ x + sys_d.B @ uk
    return np.concatenate(ys)
