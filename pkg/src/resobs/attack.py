"""Sparse false-data injection on measurement channels, plus the residue
detector it is shaped to evade.

The detector scores how far a measurement sits from the range of the output
map after removing the known input feedthrough.  A stealthy injection is
therefore synthesized inside that range, restricted to the attacked
channels by a least-squares fit, and rescaled per sample so the corrupted
measurement's relative residue stays strictly below the alarm level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, InvalidModelError
from .linsys import DiscreteLinearSystem

RESIDUE_FLOOR = 1e-9
ATTACK_LAWS = ("constant", "ramp", "random")


@dataclass
class AttackPlan:
    """What to corrupt, when, and how hard.

    support is a tuple of measurement channel indices; leave it None to have
    bind_attack draw n_channels of the power channels with the run's
    generator.  magnitude is relative to each channel's nominal level.
    """

    support: tuple | None = None
    n_channels: int | None = None
    onset: int = 200
    law: str = "ramp"
    magnitude: float = 0.2
    ramp_samples: int = 10
    stealth: bool = True
    stealth_threshold: float = 0.05
    stealth_margin: float = 0.9
    random_bounds: tuple = (0.5, 1.5)

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ConfigurationError(f"onset must be nonnegative, got {self.onset}")
        if self.law not in ATTACK_LAWS:
            raise ConfigurationError(f"law must be one of {ATTACK_LAWS}, got {self.law!r}")
        if self.magnitude < 0:
            raise ConfigurationError("magnitude must be nonnegative")
        if self.ramp_samples < 1:
            raise ConfigurationError("ramp_samples must be at least 1")
        if not 0 < self.stealth_margin <= 1:
            raise ConfigurationError("stealth_margin must be in (0, 1]")
        if self.stealth_threshold <= 0:
            raise ConfigurationError("stealth_threshold must be positive")
        lo, hi = self.random_bounds
        if not lo <= hi:
            raise ConfigurationError("random_bounds must be ordered (low, high)")
        if self.support is not None:
            self.support = tuple(sorted(int(c) for c in self.support))
            if len(set(self.support)) != len(self.support):
                raise ConfigurationError("support channels must be distinct")


@dataclass
class ResidueReport:
    """One detector evaluation: relative residue against the alarm level."""

    residue: float
    threshold: float
    alarm: bool


def _range_basis(C: np.ndarray) -> np.ndarray:
    return scipy.linalg.orth(C)


def residue_value(y: np.ndarray, u: np.ndarray, sys_d: DiscreteLinearSystem, basis: np.ndarray | None = None) -> float:
    """Relative distance of (y - D u) from the range of C."""
    y = np.asarray(y, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    Q = _range_basis(sys_d.C) if basis is None else basis
    r = y - sys_d.D @ u
    out_of_range = r - Q @ (Q.T @ r)
    return float(np.linalg.norm(out_of_range) / max(np.linalg.norm(y), RESIDUE_FLOOR))


def bdd_residue_test(y: np.ndarray, u: np.ndarray, sys_d: DiscreteLinearSystem, threshold: float = 0.05) -> ResidueReport:
    """Residue-based bad-data check on a single measurement."""
    if threshold <= 0:
        raise ConfigurationError(f"threshold must be positive, got {threshold}")
    residue = residue_value(y, u, sys_d)
    return ResidueReport(residue=residue, threshold=threshold, alarm=residue > threshold)


def make_detector(sys_d: DiscreteLinearSystem, threshold: float = 0.05):
    """Closure form of bdd_residue_test with the range basis precomputed."""
    if threshold <= 0:
        raise ConfigurationError(f"threshold must be positive, got {threshold}")
    Q = _range_basis(sys_d.C)

    def detector(y: np.ndarray, u: np.ndarray):
        residue = residue_value(y, u, sys_d, basis=Q)
        return residue, residue > threshold

    return detector


def select_support(sys_d: DiscreteLinearSystem, n_power_channels: int, n_attacked: int | None, rng: np.random.Generator) -> tuple:
    """Draw attacked channels among the power measurements (the channels
    after the frequency block), defaulting to 30 percent of all channels."""
    m = sys_d.n_outputs
    first_power = m - n_power_channels
    if n_attacked is None:
        n_attacked = math.ceil(0.3 * m)
    if not 1 <= n_attacked <= n_power_channels:
        raise ConfigurationError(f"attacked channel count must be in [1, {n_power_channels}], got {n_attacked}")
    chosen = rng.choice(np.arange(first_power, m), size=n_attacked, replace=False)
    return tuple(sorted(int(c) for c in chosen))


def stealth_direction(sys_d: DiscreteLinearSystem, support: tuple, desired: np.ndarray) -> np.ndarray:
    """Injection supported on the attacked channels that a state perturbation
    could explain: fit C c to the desired magnitudes on the support, keep the
    supported part, zero the rest."""
    C = sys_d.C
    m = sys_d.n_outputs
    support = np.asarray(support, dtype=int)
    desired = np.asarray(desired, dtype=float).reshape(-1)
    if desired.size != support.size:
        raise InvalidModelError("desired magnitudes must match the support size")
    c, *_ = np.linalg.lstsq(C[support, :], desired, rcond=None)
    full = C @ c
    e = np.zeros(m)
    e[support] = full[support]
    return e


@dataclass
class BoundAttack:
    """Per-sample attack generator bound to one run.

    Callable as attack_fn(k, y_clean).  Keeps the per-sample stealth rescale
    factors in scale_log so a crushed attack is visible, never silent.
    """

    plan: AttackPlan
    sys_d: DiscreteLinearSystem
    support: tuple
    direction: np.ndarray
    rng: np.random.Generator
    basis: np.ndarray
    scale_log: list = field(default_factory=list)

    @property
    def attacked_fraction(self) -> float:
        return len(self.support) / self.sys_d.n_outputs

    def law_factor(self, k: int) -> float:
        offset = k - self.plan.onset
        if self.plan.law == "constant":
            return 1.0
        if self.plan.law == "ramp":
            return min(1.0, (offset + 1) / self.plan.ramp_samples)
        return 1.0

    def __call__(self, k: int, y_clean: np.ndarray) -> np.ndarray:
        if k < self.plan.onset:
            return np.zeros(self.sys_d.n_outputs)
        y_clean = np.asarray(y_clean, dtype=float).reshape(-1)
        e = self.direction * self.law_factor(k)
        if self.plan.law == "random":
            lo, hi = self.plan.random_bounds
            jitter = self.rng.uniform(lo, hi, size=len(self.support))
            e = e.copy()
            e[list(self.support)] *= jitter
        if self.plan.stealth:
            e, scale = self._enforce_stealth(e, y_clean)
            self.scale_log.append((k, scale))
        return e

    def _enforce_stealth(self, e: np.ndarray, y_clean: np.ndarray):
        """Shrink the injection until the corrupted measurement's residue sits
        below stealth_margin * stealth_threshold.  Deterministic."""
        target = self.plan.stealth_margin * self.plan.stealth_threshold
        leak = e - self.basis @ (self.basis.T @ e)
        leak_norm = float(np.linalg.norm(leak))
        if leak_norm == 0.0:
            return e, 1.0
        # The clean part is range-consistent, so the residue numerator is
        # exactly scale * ||leak||; start from the closed-form scale and back
        # off geometrically until the normalized check passes.
        scale = min(1.0, 0.95 * target * float(np.linalg.norm(y_clean)) / leak_norm)
        for _ in range(200):
            candidate = scale * e
            num = scale * leak_norm
            den = max(float(np.linalg.norm(y_clean + candidate)), RESIDUE_FLOOR)
            if num / den <= target:
                return candidate, scale
            scale *= 0.8
        return np.zeros_like(e), 0.0


def bind_attack(plan: AttackPlan, sys_d: DiscreteLinearSystem, y_nominal: np.ndarray, n_power_channels: int, rng: np.random.Generator) -> BoundAttack:
    """Resolve the plan against a concrete system and nominal output level."""
    m = sys_d.n_outputs
    y_nominal = np.asarray(y_nominal, dtype=float).reshape(-1)
    if y_nominal.size != m:
        raise InvalidModelError(f"nominal output must have {m} entries")
    if plan.support is not None:
        support = plan.support
        if any(not 0 <= c < m for c in support):
            raise ConfigurationError(f"support channels out of range for {m} outputs")
        if len(support) > m:
            raise ConfigurationError("support larger than the channel count")
    else:
        support = select_support(sys_d, n_power_channels, plan.n_channels, rng)

    level = np.abs(y_nominal[list(support)])
    floor = 0.05 * max(float(np.mean(np.abs(y_nominal))), 1e-6)
    desired = plan.magnitude * np.maximum(level, floor)
    if plan.stealth:
        direction = stealth_direction(sys_d, support, desired)
    else:
        direction = np.zeros(m)
        direction[list(support)] = desired
    return BoundAttack(
        plan=plan,
        sys_d=sys_d,
        support=tuple(support),
        direction=direction,
        rng=rng,
        basis=_range_basis(sys_d.C),
    )


def generate_fdia(plan: AttackPlan, sys_d: DiscreteLinearSystem, y_true: np.ndarray, sample_index: int, rng: np.random.Generator, n_power_channels: int | None = None) -> np.ndarray:
    """One-shot form of the generator: binds against the given measurement as
    the nominal level, then evaluates the single sample."""
    if sample_index < 0:
        raise ConfigurationError("sample_index must be nonnegative")
    if n_power_channels is None:
        n_power_channels = sys_d.n_outputs
    bound = bind_attack(plan, sys_d, y_true, n_power_channels, rng)
    return bound(sample_index, y_true)
