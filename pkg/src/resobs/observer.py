"""Window observers: prior-constrained decoding and the Luenberger baseline.

The multi-model observer decodes each measurement window by quadratically
constrained basis pursuit (QCBP): minimize the l1 norm of the stacked
residual subject to the newest clean measurement lying inside the prior's
credibility ellipsoid.  The decoded window-start state is then rolled
forward through the known inputs to the current sample.  A classical
Luenberger observer with the same model serves as the attack-sensitive
baseline, and closed-form constants bound the decoding error in terms of the
corruption's distance from sparsity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .admm import AdmmOperator, AdmmResult, SolverSettings, WarmState, solve_l1_admm
from .csdecode import best_s_term, sat, theorem1_constant
from .errors import InvalidGainError, InvalidModelError
from .linsys import DiscreteLinearSystem, HorizonOperators, measurement_offset, stack_window
from .prior import AuxiliaryPrior


@dataclass
class QcbpProblem:
    """One window decode: operators, data, and the prior for the newest sample."""

    ops: HorizonOperators
    y_window: np.ndarray
    u_window: np.ndarray
    prior: AuxiliaryPrior
    u_curr: np.ndarray | None = None


@dataclass
class QcbpSolution:
    x_hat: np.ndarray
    e_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    feasibility_slack: float
    polished: bool
    state: WarmState
    merit_history: np.ndarray | None = None


def _constraint_rescale(Phi: np.ndarray, M: np.ndarray) -> float:
    """Factor that brings the whitened constraint rows to the same RMS row
    norm as the data rows.  Scaling (M, q, radius) by it leaves the
    constraint set unchanged but keeps the splitting well conditioned when
    the prior is much tighter than the measurement scale."""
    m_norm = float(np.linalg.norm(M)) / math.sqrt(M.shape[0])
    if m_norm == 0.0:
        return 1.0
    phi_norm = float(np.linalg.norm(Phi)) / math.sqrt(Phi.shape[0])
    return phi_norm / m_norm if phi_norm > 0 else 1.0


def build_qcbp_operator(ops: HorizonOperators, prior: AuxiliaryPrior) -> AdmmOperator:
    """Pre-factor the ADMM normal equations for repeated window solves.

    Valid as long as the window operators and the prior covariance stay
    fixed; the mean may move between solves.
    """
    M = prior.whiten(ops.Phi_last)
    return AdmmOperator(ops.Phi, M=M * _constraint_rescale(ops.Phi, M))


def solve_qcbp(
    problem: QcbpProblem,
    settings: SolverSettings | None = None,
    warm: WarmState | None = None,
    operator: AdmmOperator | None = None,
    record_merit: bool = False,
) -> QcbpSolution:
    """Decode one window under the prior credibility constraint.

    The constraint is whitened by the prior's Cholesky factor so the ADMM
    projection acts on a Euclidean ball of radius sqrt(radius_sq).
    """
    ops = problem.ops
    prior = problem.prior
    if prior.dim != ops.m:
        raise InvalidModelError(f"prior has {prior.dim} channels, window expects {ops.m}")
    if ops.rows <= ops.n:
        raise InvalidModelError("window has no redundancy: m*T must exceed n")

    y = stack_window(problem.y_window, ops.T, ops.m, "measurement")
    u = stack_window(problem.u_window, ops.T - 1, ops.l, "input") if ops.T > 1 else np.zeros(0)
    b = y - measurement_offset(ops, u, problem.u_curr)

    # Constraint: || W (Phi_last x + H_last u + D u_curr - mu) || <= radius.
    # Rows, offset and radius are jointly rescaled (same feasible set) so the
    # constraint block does not dominate the operator splitting.
    offset = ops.H_last @ u - prior.mu
    if problem.u_curr is not None:
        offset = offset + ops.D @ np.asarray(problem.u_curr, dtype=float).reshape(-1)
    M0 = prior.whiten(ops.Phi_last)
    beta = _constraint_rescale(ops.Phi, M0)

    op = operator if operator is not None else AdmmOperator(ops.Phi, M=M0 * beta)
    res = solve_l1_admm(
        op,
        b,
        settings=settings,
        q=prior.whiten(offset) * beta,
        radius=math.sqrt(prior.radius_sq) * beta,
        warm=warm,
        record_merit=record_merit,
    )
    return QcbpSolution(
        x_hat=res.x,
        e_hat=res.e,
        objective=res.objective,
        iterations=res.iterations,
        converged=res.converged,
        feasibility_slack=res.feasibility_slack / beta,
        polished=res.polished,
        state=res.state,
        merit_history=res.merit_history,
    )


def multi_model_estimate(
    y_window: np.ndarray,
    u_window: np.ndarray,
    ops: HorizonOperators,
    prior: AuxiliaryPrior,
    u_curr: np.ndarray | None = None,
    settings: SolverSettings | None = None,
    warm: WarmState | None = None,
    operator: AdmmOperator | None = None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Window decode plus forward propagation to the current sample.

    Returns the current-state estimate, the stacked corruption estimate, and
    solver diagnostics.
    """
    sol = solve_qcbp(
        QcbpProblem(ops=ops, y_window=y_window, u_window=u_window, prior=prior, u_curr=u_curr),
        settings=settings,
        warm=warm,
        operator=operator,
    )
    u = stack_window(u_window, ops.T - 1, ops.l, "input") if ops.T > 1 else np.zeros(0)
    x_now = ops.A_pow @ sol.x_hat + ops.G @ u
    diagnostics = {
        "objective": sol.objective,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "feasibility_slack": sol.feasibility_slack,
        "polished": sol.polished,
        "state": sol.state,
    }
    return x_now, sol.e_hat, diagnostics


@dataclass
class Theorem2Constants:
    """Closed-form multipliers for the prior-constrained decoding bound.

    K1 caps the error through the credibility ellipsoid alone; K2 scales the
    sparsity defect inside the saturation; K3 is the unconstrained-decoder
    multiplier they are both built from.
    """

    K1: float
    K2: float
    K3: float
    delta_2s: float
    s: int
    m: int
    sigma_bar: float
    radius_sq: float


def theorem2_constants(
    delta_2s: float, s: int, m: int, sigma_bar: float, radius_sq: float
) -> Theorem2Constants:
    if m <= s:
        raise InvalidModelError(f"channel count m={m} must exceed sparsity s={s}")
    if sigma_bar <= 0 or radius_sq <= 0:
        raise InvalidModelError("sigma_bar and radius_sq must be positive")
    K3 = theorem1_constant(delta_2s, s)
    K1 = math.sqrt(2.0 * radius_sq * sigma_bar)
    K2 = K3 * math.sqrt((m - s) / (2.0 * radius_sq * sigma_bar))
    return Theorem2Constants(
        K1=K1, K2=K2, K3=K3, delta_2s=delta_2s, s=s, m=m, sigma_bar=sigma_bar, radius_sq=radius_sq
    )


def theorem2_bound(consts: Theorem2Constants, e_window: np.ndarray) -> float:
    """Error ceiling for the newest corruption block: the sparsity defect
    route saturates at the ellipsoid diameter term K1."""
    e = np.asarray(e_window, dtype=float).reshape(-1)
    tail = e - best_s_term(e, consts.s)
    return consts.K1 * float(sat(consts.K2 * float(np.linalg.norm(tail)), 1.0))


def design_luenberger_gain(sys_d: DiscreteLinearSystem, contraction: float = 0.5) -> np.ndarray:
    """Output-injection gain moving every open-loop eigenvalue to
    contraction times its modulus (same argument), via pole placement on the
    dual pair.  Deterministic for fixed inputs."""
    if not 0.0 < contraction < 1.0:
        raise InvalidGainError(f"contraction must be in (0, 1), got {contraction}")
    eig = np.linalg.eigvals(sys_d.A)
    if np.max(np.abs(eig)) >= 1.0 / contraction:
        raise InvalidGainError(
            "open-loop eigenvalues too large: contraction of the moduli must land strictly inside the unit circle"
        )
    targets = np.sort_complex(contraction * eig)
    placed = scipy.signal.place_poles(sys_d.A.T, sys_d.C.T, targets)
    gain = placed.gain_matrix.T
    return gain


@dataclass
class LuenbergerObserver:
    """Classical output-injection observer; the attack-sensitive baseline."""

    sys: DiscreteLinearSystem
    gain: np.ndarray

    def __post_init__(self) -> None:
        self.gain = np.asarray(self.gain, dtype=float)
        n, m = self.sys.n_states, self.sys.n_outputs
        if self.gain.shape != (n, m):
            raise InvalidGainError(f"gain must be {n}x{m}, got {self.gain.shape}")
        closed = self.sys.A - self.gain @ self.sys.C
        rho = float(np.max(np.abs(np.linalg.eigvals(closed))))
        if not rho < 1.0:
            raise InvalidGainError(f"error dynamics are not contractive: spectral radius {rho:.6g}")
        self.error_spectral_radius = rho

    def step(self, x_hat: np.ndarray, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One prediction-correction update; returns the next-sample estimate."""
        x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        innovation = y - self.sys.C @ x_hat - self.sys.D @ u
        return self.sys.A @ x_hat + self.sys.B @ u + self.gain @ innovation


def luenberger_step(obs: LuenbergerObserver, x_hat: np.ndarray, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    return obs.step(x_hat, y, u)
