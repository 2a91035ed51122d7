"""Sparse corruption decoding over measurement windows.

Given the stacked window equation y = Phi x0 + H u + e, the decoders estimate
the window-start state x0 together with a sparse per-channel corruption e:
an exhaustive support-enumeration oracle, an l1 relaxation solved by ADMM,
a brute-force restricted-isometry constant, recovery-error bounds for the
relaxation, and correctability rank tests that certify when s-sparse
corruptions are uniquely decodable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .admm import EXACT_FIT_RTOL, SUPPORT_RTOL, AdmmOperator, SolverSettings, solve_l1_admm
from .errors import BoundInapplicableError, InvalidModelError, OracleTooLargeError
from .linsys import DiscreteLinearSystem, HorizonOperators, build_horizon_operators, measurement_offset, stack_window

INV_SQRT2 = 1.0 / math.sqrt(2.0)


def sat(x, eps: float):
    """Symmetric saturation: identity inside [-eps, eps], clipped outside."""
    if eps < 0:
        raise InvalidModelError(f"saturation level must be nonnegative, got {eps}")
    return np.clip(x, -eps, eps)


def best_s_term(e: np.ndarray, s: int) -> np.ndarray:
    """Keep the s largest-magnitude entries of e, zeroing the rest.

    Magnitude ties keep the lowest index (stable ordering).
    """
    e = np.asarray(e, dtype=float)
    if e.ndim != 1:
        raise InvalidModelError(f"expected a vector, got shape {e.shape}")
    if s < 0:
        raise InvalidModelError(f"sparsity must be nonnegative, got {s}")
    if s >= e.size:
        return e.copy()
    order = np.argsort(-np.abs(e), kind="stable")
    out = np.zeros_like(e)
    keep = order[:s]
    out[keep] = e[keep]
    return out


@dataclass
class DecodeResult:
    """Outcome of a window decode."""

    x_hat: np.ndarray
    e_hat: np.ndarray
    objective: float
    converged: bool
    iterations: int
    support: np.ndarray
    unique: bool | None = None


@dataclass
class RipReport:
    delta: float
    sparsity: int
    supports_checked: int

    @property
    def certified(self) -> bool:
        """True when the constant is inside the l1 exact-recovery region."""
        return self.delta < INV_SQRT2


def _window_residual(
    ops: HorizonOperators,
    y_window: np.ndarray,
    u_window: np.ndarray,
    u_curr: np.ndarray | None,
) -> np.ndarray:
    y = stack_window(y_window, ops.T, ops.m, "measurement")
    u = stack_window(u_window, ops.T - 1, ops.l, "input") if ops.T > 1 else np.zeros(0)
    return y - measurement_offset(ops, u, u_curr)


def _support_of(e: np.ndarray, scale: float) -> np.ndarray:
    return np.flatnonzero(np.abs(e) > SUPPORT_RTOL * scale)


def l0_decode_bruteforce(
    y_window: np.ndarray,
    ops: HorizonOperators,
    u_window: np.ndarray,
    s_max: int,
    u_curr: np.ndarray | None = None,
    fixed_support: bool = False,
    residual_tol: float = EXACT_FIT_RTOL,
    max_supports: int = 10**6,
) -> DecodeResult:
    """Exhaustive minimum-support decoder.

    Enumerates candidate supports in increasing cardinality (lexicographic
    within a level); for each candidate solves least squares on the
    complement rows and accepts the first exact fit.  With fixed_support the
    candidates are channel subsets replicated across the window, matching an
    attacker that cannot retarget between samples; otherwise every stacked
    row is individually selectable.  If two supports of the same cardinality
    both fit exactly with different states, the first (lexicographically
    smallest) wins and the result is flagged non-unique.  Without any exact
    fit the scanned candidate leaving the fewest unexplained rows is
    returned.
    """
    b = _window_residual(ops, y_window, u_window, u_curr)
    rows, n = ops.rows, ops.n
    scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
    tol = residual_tol * scale

    if fixed_support:
        universe = ops.m
        expand = lambda combo: [t * ops.m + ch for t in range(ops.T) for ch in combo]
    else:
        universe = rows
        expand = lambda combo: list(combo)

    def refit(row_idx: list[int]) -> tuple[np.ndarray, np.ndarray, float]:
        mask = np.ones(rows, dtype=bool)
        mask[row_idx] = False
        x, *_ = np.linalg.lstsq(ops.Phi[mask], b[mask], rcond=None)
        e = b - ops.Phi @ x
        worst = float(np.max(np.abs(e[mask]), initial=0.0))
        return x, e, worst

    checked = 0
    best: tuple[int, np.ndarray, np.ndarray, tuple[int, ...]] | None = None
    for card in range(0, s_max + 1):
        level = math.comb(universe, card)
        if checked + level > max_supports:
            raise OracleTooLargeError(
                f"support enumeration would scan {checked + level} candidates "
                f"(> {max_supports}) at cardinality {card}"
            )
        exact: tuple[np.ndarray, np.ndarray, tuple[int, ...]] | None = None
        unique = True
        for combo in itertools.combinations(range(universe), card):
            checked += 1
            row_idx = expand(combo)
            x, e, worst = refit(row_idx)
            if worst <= tol:
                if exact is None:
                    exact = (x, e, tuple(row_idx))
                elif np.max(np.abs(x - exact[0])) > 1e-6 * max(1.0, float(np.max(np.abs(exact[0])))):
                    unique = False
            else:
                miss = int(np.sum(np.abs(e) > tol))
                if best is None or miss < best[0]:
                    best = (miss, x, e, tuple(row_idx))
        if exact is not None:
            x, e, row_idx = exact
            support = np.asarray([r for r in row_idx if abs(e[r]) > tol], dtype=int)
            return DecodeResult(
                x_hat=x,
                e_hat=e,
                objective=float(support.size),
                converged=True,
                iterations=checked,
                support=support,
                unique=unique,
            )

    assert best is not None, "cardinality 0 is always scanned"
    miss, x, e, _ = best
    return DecodeResult(
        x_hat=x,
        e_hat=e,
        objective=float(miss),
        converged=False,
        iterations=checked,
        support=np.flatnonzero(np.abs(e) > tol),
        unique=None,
    )


def l1_decode(
    y_window: np.ndarray,
    ops: HorizonOperators,
    u_window: np.ndarray,
    u_curr: np.ndarray | None = None,
    settings: SolverSettings | None = None,
    operator: AdmmOperator | None = None,
) -> DecodeResult:
    """Convex relaxation of the minimum-support decoder.

    Minimizes ||y - H u - Phi x||_1 over the window-start state; the residual
    at the optimum is the corruption estimate.  Equivalent to minimum-l1
    error recovery subject to the annihilator equation F e = F y', since the
    residual sweeps exactly the affine set {b - Phi x}.  A support-restricted
    least-squares polish recovers machine precision whenever the support was
    identified exactly.
    """
    if ops.rows <= ops.n:
        raise InvalidModelError("window has no redundancy: m*T must exceed n")
    b = _window_residual(ops, y_window, u_window, u_curr)
    op = operator if operator is not None else AdmmOperator(ops.Phi)
    res = solve_l1_admm(op, b, settings=settings)
    scale = max(1.0, float(np.max(np.abs(b)))) if b.size else 1.0
    return DecodeResult(
        x_hat=res.x,
        e_hat=res.e,
        objective=res.objective,
        converged=res.converged,
        iterations=res.iterations,
        support=_support_of(res.e, scale),
    )


def rip_constant_bruteforce(F: np.ndarray, s: int, max_supports: int = 10**6) -> RipReport:
    """Exact restricted-isometry constant by column-subset enumeration.

    delta_s = max over |S| = s of the worst eigenvalue deviation of
    F_S^T F_S from identity.  Monotonicity in the support makes scanning
    only full-size subsets sufficient.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2:
        raise InvalidModelError(f"F must be 2-D, got shape {F.shape}")
    cols = F.shape[1]
    if not 1 <= s <= cols:
        raise InvalidModelError(f"sparsity must be in [1, {cols}], got {s}")
    total = math.comb(cols, s)
    if total > max_supports:
        raise OracleTooLargeError(f"{total} supports exceed the enumeration guard {max_supports}")
    delta = 0.0
    for combo in itertools.combinations(range(cols), s):
        G = F[:, combo]
        lam = np.linalg.eigvalsh(G.T @ G)
        delta = max(delta, float(lam[-1] - 1.0), float(1.0 - lam[0]))
    return RipReport(delta=delta, sparsity=s, supports_checked=total)


def theorem1_constant(delta_2s: float, s: int) -> float:
    """Multiplier on the l1 tail norm in the recovery-error bound.

    Valid for delta_2s strictly below 1/sqrt(2); grows without bound as the
    constant approaches that edge.
    """
    if s < 1:
        raise InvalidModelError(f"sparsity must be >= 1, got {s}")
    if not 0.0 <= delta_2s < INV_SQRT2:
        raise BoundInapplicableError(
            f"recovery bound requires 0 <= delta_2s < 1/sqrt(2), got {delta_2s}"
        )
    gap = INV_SQRT2 - delta_2s
    core = (delta_2s + math.sqrt(delta_2s * gap)) / (math.sqrt(2.0) * gap)
    return (2.0 / math.sqrt(s)) * (core + 1.0)


def theorem1_bound(delta_2s: float, s: int, e: np.ndarray) -> float:
    """Recovery-error ceiling: constant times the l1 norm of the best
    s-term approximation tail.  Zero exactly when e is s-sparse."""
    e = np.asarray(e, dtype=float).reshape(-1)
    tail = e - best_s_term(e, s)
    return theorem1_constant(delta_2s, s) * float(np.abs(tail).sum())


def _gram_rank_full(G: np.ndarray, lam_ref: float, rank_rtol: float) -> bool:
    lam = np.linalg.eigvalsh(G)
    lam_max = max(float(lam[-1]), lam_ref)
    return float(lam[0]) > (rank_rtol**2) * lam_max


def correctability_fixed(
    sys_d: DiscreteLinearSystem,
    T: int,
    s: int,
    max_supports: int = 10**5,
    rank_rtol: float = 1e-10,
) -> bool:
    """Whether every s-channel corruption with a fixed support over the
    window is uniquely decodable: deleting any 2s channels from the
    observability stack must leave full state rank."""
    if s < 0:
        raise InvalidModelError(f"sparsity must be nonnegative, got {s}")
    ops = build_horizon_operators(sys_d, T, allow_missing_annihilator=True)
    m, n = ops.m, ops.n
    if 2 * s > m:
        return False
    total = math.comb(m, 2 * s)
    if total > max_supports:
        raise OracleTooLargeError(f"{total} channel subsets exceed the guard {max_supports}")
    grams = [ops.Phi[ch::m].T @ ops.Phi[ch::m] for ch in range(m)]
    lam_ref = float(np.linalg.eigvalsh(sum(grams))[-1])
    # summing the kept channels' Grams (all PSD) avoids the cancellation
    # noise a deletion downdate would leave when the remainder is singular
    for combo in itertools.combinations(range(m), 2 * s):
        dropped = set(combo)
        G = np.zeros((n, n))
        for ch in range(m):
            if ch not in dropped:
                G += grams[ch]
        if not _gram_rank_full(G, lam_ref, rank_rtol):
            return False
    return True


def correctability_varying(
    sys_d: DiscreteLinearSystem,
    T: int,
    s: int,
    max_supports: int = 10**5,
    rank_rtol: float = 1e-10,
) -> bool:
    """Fixed-support condition strengthened to attackers that may retarget
    every sample: any 2s stacked rows may be deleted."""
    if s < 0:
        raise InvalidModelError(f"sparsity must be nonnegative, got {s}")
    ops = build_horizon_operators(sys_d, T, allow_missing_annihilator=True)
    rows = ops.rows
    if 2 * s > rows:
        return False
    total = math.comb(rows, 2 * s)
    if total > max_supports:
        raise OracleTooLargeError(f"{total} row subsets exceed the guard {max_supports}")
    lam_ref = float(np.linalg.eigvalsh(ops.Phi.T @ ops.Phi)[-1])
    mask = np.ones(rows, dtype=bool)
    for combo in itertools.combinations(range(rows), 2 * s):
        mask[:] = True
        mask[list(combo)] = False
        kept = ops.Phi[mask]
        if not _gram_rank_full(kept.T @ kept, lam_ref, rank_rtol):
            return False
    return True
