"""Consensus ADMM for window decoding problems.

Solves

    minimize    || b - Phi x ||_1
    subject to  || M x + q ||_2 <= radius      (optional)

by splitting the residual (soft-threshold update) and the constrained image
(ball projection) into consensus blocks, with a cached normal-equation
factorization for the x-update.  The constraint arrives already whitened, so
the projection is onto an ordinary Euclidean ball.  The unconstrained problem
is the same loop with the projection block removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InfeasiblePriorError, SolverFailureError

# Absolute residual cutoff below which a least-squares refit counts as exact.
EXACT_FIT_RTOL = 1e-8
# Entry threshold (relative to the data scale) for support detection.
SUPPORT_RTOL = 1e-7


@dataclass
class SolverSettings:
    """ADMM knobs; the defaults favor accuracy over speed."""

    penalty: float = 1.0
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_iter: int = 20000
    polish: bool = True

    def __post_init__(self) -> None:
        if self.penalty <= 0:
            raise SolverFailureError(f"penalty must be positive, got {self.penalty}")
        if self.max_iter < 1:
            raise SolverFailureError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class WarmState:
    """Internal iterate carried between consecutive solves."""

    w: np.ndarray
    u_w: np.ndarray
    p: np.ndarray | None = None
    u_p: np.ndarray | None = None


@dataclass
class AdmmResult:
    x: np.ndarray
    e: np.ndarray
    objective: float
    iterations: int
    converged: bool
    feasibility_slack: float
    polished: bool
    state: WarmState
    merit_history: np.ndarray | None = None


class AdmmOperator:
    """Caches Phi / M products and the normal-equation factorization so that
    repeated solves over a moving window pay the setup cost once."""

    def __init__(self, Phi: np.ndarray, M: np.ndarray | None = None):
        self.Phi = np.ascontiguousarray(Phi, dtype=float)
        self.M = None if M is None else np.ascontiguousarray(M, dtype=float)
        self.PhiT = self.Phi.T.copy()
        G = self.PhiT @ self.Phi
        if self.M is not None:
            self.MT = self.M.T.copy()
            G = G + self.MT @ self.M
        try:
            self.cho = scipy.linalg.cho_factor(G, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise SolverFailureError(
                "normal equations are singular: the window operator does not have full column rank"
            ) from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self.cho, rhs, check_finite=False)


def _soft(v: np.ndarray, kappa: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


def _try_polish(
    op: AdmmOperator,
    b: np.ndarray,
    e_ref: np.ndarray,
    objective_ref: float,
    q: np.ndarray | None,
    radius: float | None,
) -> tuple[np.ndarray, np.ndarray, float] | None:
    """Support-restricted least-squares refit.

    Accepted only when the complement rows fit exactly and neither the
    objective nor the constraint gets worse; returns None otherwise.
    """
    n = op.Phi.shape[1]
    scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
    thresh = SUPPORT_RTOL * scale
    support = np.abs(e_ref) > thresh
    comp = ~support
    if int(comp.sum()) < n:
        return None
    x_p, *_ = np.linalg.lstsq(op.Phi[comp], b[comp], rcond=None)
    e_p = b - op.Phi @ x_p
    if float(np.max(np.abs(e_p[comp]), initial=0.0)) > EXACT_FIT_RTOL * scale:
        return None
    if radius is not None and np.isfinite(radius):
        gap = float(np.linalg.norm(op.M @ x_p + q)) - radius
        if gap > EXACT_FIT_RTOL * max(1.0, radius):
            return None
    obj_p = float(np.abs(e_p).sum())
    if obj_p > objective_ref + 1e-9 * max(1.0, objective_ref):
        return None
    return x_p, e_p, obj_p


def solve_l1_admm(
    op: AdmmOperator,
    b: np.ndarray,
    settings: SolverSettings | None = None,
    q: np.ndarray | None = None,
    radius: float | None = None,
    warm: WarmState | None = None,
    record_merit: bool = False,
) -> AdmmResult:
    """Run the ADMM loop; see the module docstring for the problem shape.

    radius None or inf drops the ball constraint (the projection block stays
    in the loop when M is present so both paths share one code shape, but an
    infinite radius makes the projection the identity).
    """
    settings = settings or SolverSettings()
    Phi, M = op.Phi, op.M
    rows, n = Phi.shape
    constrained = M is not None and radius is not None and np.isfinite(radius)
    if M is not None and q is None:
        raise SolverFailureError("constraint offset q is required when M is given")
    if constrained and radius < 0:
        raise InfeasiblePriorError(f"ball radius must be nonnegative, got {radius}")

    b = np.asarray(b, dtype=float).reshape(-1)
    scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0

    if constrained:
        # The constrained image ranges over an affine subspace; if the ball
        # misses it entirely no iterate can ever be feasible, so fail fast.
        x_ls, *_ = np.linalg.lstsq(M, -q, rcond=None)
        dmin = float(np.linalg.norm(M @ x_ls + q))
        if dmin > radius * (1.0 + 1e-9) + 1e-12:
            raise InfeasiblePriorError(
                f"prior credibility ball (radius {radius:.6g}) excludes every "
                f"model-consistent trajectory (closest distance {dmin:.6g})"
            )

    # Zero-objective shortcut: if the window is exactly consistent, the
    # all-rows least-squares fit is optimal (the objective cannot go below 0).
    x0, *_ = np.linalg.lstsq(Phi, b, rcond=None)
    e0 = b - Phi @ x0
    if float(np.max(np.abs(e0), initial=0.0)) <= EXACT_FIT_RTOL * scale:
        ok = True
        slack = 0.0
        if constrained:
            slack = max(0.0, float(np.linalg.norm(M @ x0 + q)) - radius)
            ok = slack <= EXACT_FIT_RTOL * max(1.0, radius)
        if ok:
            m_dim = M.shape[0] if M is not None else 0
            state = WarmState(
                w=e0.copy(),
                u_w=np.zeros(rows),
                p=(M @ x0 + q) if M is not None else None,
                u_p=np.zeros(m_dim) if M is not None else None,
            )
            return AdmmResult(
                x=x0,
                e=e0,
                objective=float(np.abs(e0).sum()),
                iterations=0,
                converged=True,
                feasibility_slack=slack,
                polished=True,
                state=state,
                merit_history=np.zeros(0) if record_merit else None,
            )

    rho = settings.penalty
    if warm is not None:
        w = warm.w.copy()
        u_w = warm.u_w.copy()
        p = warm.p.copy() if (M is not None and warm.p is not None) else None
        u_p = warm.u_p.copy() if (M is not None and warm.u_p is not None) else None
    else:
        w = u_w = p = u_p = None
    if w is None:
        w = e0.copy()
        u_w = np.zeros(rows)
    if M is not None and p is None:
        p = M @ x0 + q
        if constrained:
            nrm = float(np.linalg.norm(p))
            if nrm > radius and nrm > 0:
                p *= radius / nrm
        u_p = np.zeros(M.shape[0])

    merit: list[float] = []
    x = x0
    converged = False
    iterations = 0
    sqrt_pri = math.sqrt(rows + (M.shape[0] if M is not None else 0))
    sqrt_dual = math.sqrt(n)

    for it in range(1, settings.max_iter + 1):
        iterations = it
        # x-update: ridge-free normal equations against both consensus blocks
        rhs = op.PhiT @ (b - w - u_w)
        if M is not None:
            rhs += op.MT @ (p - q - u_p)
        x = op.solve(rhs)
        Px = Phi @ x
        Mx = (M @ x) if M is not None else None

        w_old = w
        w = _soft(b - Px - u_w, 1.0 / rho)
        r_w = Px + w - b
        u_w = u_w + r_w

        if M is not None:
            p_old = p
            t = Mx + q + u_p
            if constrained:
                nrm = float(np.linalg.norm(t))
                p = t * (radius / nrm) if nrm > radius and nrm > 0 else t
            else:
                p = t
            r_p = Mx + q - p
            u_p = u_p + r_p
            pri_sq = float(r_w @ r_w + r_p @ r_p)
            dual_vec = op.PhiT @ (w - w_old) - op.MT @ (p - p_old)
            ax_norm = math.sqrt(float(Px @ Px + Mx @ Mx))
            bz_norm = math.sqrt(float(w @ w + p @ p))
            c_norm = math.sqrt(float(b @ b + q @ q))
            dual_ref = rho * float(np.linalg.norm(op.PhiT @ u_w + op.MT @ u_p))
            if record_merit:
                merit.append(
                    math.sqrt(
                        float(
                            (w - w_old) @ (w - w_old)
                            + (p - p_old) @ (p - p_old)
                            + r_w @ r_w
                            + r_p @ r_p
                        )
                    )
                )
        else:
            pri_sq = float(r_w @ r_w)
            dual_vec = op.PhiT @ (w - w_old)
            ax_norm = float(np.linalg.norm(Px))
            bz_norm = float(np.linalg.norm(w))
            c_norm = float(np.linalg.norm(b))
            dual_ref = rho * float(np.linalg.norm(op.PhiT @ u_w))
            if record_merit:
                merit.append(math.sqrt(float((w - w_old) @ (w - w_old) + r_w @ r_w)))

        eps_pri = sqrt_pri * settings.abs_tol + settings.rel_tol * max(ax_norm, bz_norm, c_norm)
        eps_dual = sqrt_dual * settings.abs_tol + settings.rel_tol * dual_ref
        if math.sqrt(pri_sq) <= eps_pri and rho * float(np.linalg.norm(dual_vec)) <= eps_dual:
            converged = True
            break

    e = b - Phi @ x
    objective = float(np.abs(e).sum())
    polished = False
    if settings.polish:
        refit = _try_polish(op, b, e, objective, q, radius if constrained else None)
        if refit is not None:
            x, e, objective = refit
            polished = True

    slack = 0.0
    if constrained:
        slack = max(0.0, float(np.linalg.norm(M @ x + q)) - radius)

    state = WarmState(
        w=w.copy(),
        u_w=u_w.copy(),
        p=None if p is None else p.copy(),
        u_p=None if u_p is None else u_p.copy(),
    )
    return AdmmResult(
        x=x,
        e=e,
        objective=objective,
        iterations=iterations,
        converged=converged,
        feasibility_slack=slack,
        polished=polished,
        state=state,
        merit_history=np.asarray(merit) if record_merit else None,
    )
