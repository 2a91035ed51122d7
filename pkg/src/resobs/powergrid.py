"""Linearized swing-dynamics model of a transmission grid.

The network is an admittance-weighted Laplacian over generator internal
nodes plus buses.  Bus angles are algebraic (DC power flow) and get
eliminated, leaving generator angles and frequencies as the state.  Outputs
are the generator frequencies and the net active power leaving each bus, so
the measurement carries a direct feedthrough from the demand input.  A PI
loop on measured frequency closes the plant, and `simulate_closed_loop`
drives the whole arrangement while a bank of observers watches the possibly
corrupted measurements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, InvalidModelError, ResobsError
from .linsys import ContinuousLinearSystem, DiscreteLinearSystem

LAPLACIAN_ATOL = 1e-9


def laplacian_from_branches(n_nodes: int, branches) -> np.ndarray:
    """Weighted graph Laplacian from (node_i, node_j, susceptance) triples."""
    L = np.zeros((n_nodes, n_nodes))
    for i, j, b in branches:
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise ConfigurationError(f"branch endpoint out of range: ({i}, {j})")
        if i == j:
            raise ConfigurationError(f"self-loop branch at node {i}")
        if b <= 0:
            raise ConfigurationError(f"branch susceptance must be positive, got {b}")
        L[i, i] += b
        L[j, j] += b
        L[i, j] -= b
        L[j, i] -= b
    return L


@dataclass
class GridCase:
    """Network data partitioned generator-first.

    L is the lossless network Laplacian over n_g generator internal nodes
    followed by n_b buses.  load_sensitivity grounds the bus subnetwork
    (frequency-sensitive load response), which is what makes the reduced
    dynamics strictly stable and the bus block invertible.  P_node maps bus
    angles to the measured net active power at each bus.
    """

    n_g: int
    n_b: int
    L: np.ndarray
    M: np.ndarray
    D_g: np.ndarray
    P_node: np.ndarray
    load_sensitivity: np.ndarray
    demand: np.ndarray
    gen_power: np.ndarray
    gen_buses: tuple = ()
    name: str = "case"

    def __post_init__(self) -> None:
        self.L = np.asarray(self.L, dtype=float)
        self.M = np.asarray(self.M, dtype=float).reshape(-1)
        self.D_g = np.asarray(self.D_g, dtype=float).reshape(-1)
        self.P_node = np.asarray(self.P_node, dtype=float)
        self.load_sensitivity = np.asarray(self.load_sensitivity, dtype=float).reshape(-1)
        self.demand = np.asarray(self.demand, dtype=float).reshape(-1)
        self.gen_power = np.asarray(self.gen_power, dtype=float).reshape(-1)
        g, nb = self.n_g, self.n_b
        N = g + nb
        if self.L.shape != (N, N):
            raise InvalidModelError(f"Laplacian must be {N}x{N}, got {self.L.shape}")
        if not np.allclose(self.L, self.L.T, atol=LAPLACIAN_ATOL):
            raise InvalidModelError("Laplacian must be symmetric")
        row_sums = np.abs(self.L.sum(axis=1)).max()
        if row_sums > LAPLACIAN_ATOL:
            raise InvalidModelError(f"Laplacian row sums must vanish (lossless network), got {row_sums:.3g}")
        if self.M.shape != (g,) or np.any(self.M <= 0):
            raise InvalidModelError("inertia must be positive per generator")
        if self.D_g.shape != (g,) or np.any(self.D_g <= 0):
            raise InvalidModelError("damping must be positive per generator")
        if self.P_node.shape != (nb, nb):
            raise InvalidModelError(f"P_node must be {nb}x{nb}, got {self.P_node.shape}")
        if self.load_sensitivity.shape != (nb,) or np.any(self.load_sensitivity < 0):
            raise InvalidModelError("load sensitivity must be nonnegative per bus")
        if self.demand.shape != (nb,):
            raise InvalidModelError(f"demand must have {nb} entries")
        if self.gen_power.shape != (g,):
            raise InvalidModelError(f"gen_power must have {g} entries")

    @property
    def n_nodes(self) -> int:
        return self.n_g + self.n_b

    @property
    def L_gg(self) -> np.ndarray:
        return self.L[: self.n_g, : self.n_g]

    @property
    def L_gl(self) -> np.ndarray:
        return self.L[: self.n_g, self.n_g :]

    @property
    def L_lg(self) -> np.ndarray:
        return self.L[self.n_g :, : self.n_g]

    @property
    def L_ll(self) -> np.ndarray:
        return self.L[self.n_g :, self.n_g :]

    @property
    def L_ll_eff(self) -> np.ndarray:
        """Bus block with the load-sensitivity grounding added."""
        return self.L_ll + np.diag(self.load_sensitivity)

    @property
    def demand_injection(self) -> np.ndarray:
        """Demand as signed bus injections: consumption enters negative."""
        return -self.demand


def load_case(source: str | Path | dict) -> GridCase:
    """Build a GridCase from a JSON case document.

    Expected fields: buses (count), branches ([from, to, reactance] with
    1-indexed bus numbers), gen_buses, x_d_prime, inertia, damping,
    load_sensitivity (scalar or per bus), demand (per bus), optional
    gen_power (defaults to an equal split of total demand).
    """
    if isinstance(source, dict):
        data = source
    else:
        data = json.loads(Path(source).read_text())
    try:
        n_b = int(data["buses"])
        raw_branches = data["branches"]
        gen_buses = [int(b) for b in data["gen_buses"]]
        x_d_prime = float(data["x_d_prime"])
    except KeyError as exc:
        raise ConfigurationError(f"case document missing field {exc}") from exc
    n_g = len(gen_buses)
    if len(set(gen_buses)) != n_g:
        raise ConfigurationError("gen_buses must be distinct")
    if any(not 1 <= b <= n_b for b in gen_buses):
        raise ConfigurationError("gen_buses must be 1-indexed bus numbers")
    if x_d_prime <= 0:
        raise ConfigurationError("x_d_prime must be positive")

    # Node layout: generator internal nodes 0..n_g-1, then buses.
    bus_node = lambda b: n_g + b - 1
    branches = []
    bus_branches = []
    for f, t, x in raw_branches:
        if x <= 0:
            raise ConfigurationError(f"branch reactance must be positive, got {x}")
        branches.append((bus_node(int(f)), bus_node(int(t)), 1.0 / float(x)))
        bus_branches.append((int(f) - 1, int(t) - 1, 1.0 / float(x)))
    for gi, b in enumerate(gen_buses):
        branches.append((gi, bus_node(b), 1.0 / x_d_prime))

    N = n_g + n_b
    L = laplacian_from_branches(N, branches)

    sens = np.asarray(data.get("load_sensitivity", 0.0), dtype=float) * np.ones(n_b)
    # Net power leaving a bus: flows into the bus-to-bus network plus the
    # sensitivity-load draw.  The generator infeed is not part of it.
    P_node = laplacian_from_branches(n_b, bus_branches) + np.diag(sens)

    demand = np.asarray(data.get("demand", np.zeros(n_b)), dtype=float) * np.ones(n_b)
    if "gen_power" in data:
        gen_power = np.asarray(data["gen_power"], dtype=float) * np.ones(n_g)
    else:
        gen_power = np.full(n_g, demand.sum() / n_g)
    inertia = np.asarray(data.get("inertia", 0.1), dtype=float) * np.ones(n_g)
    damping = np.asarray(data.get("damping", 0.05), dtype=float) * np.ones(n_g)

    return GridCase(
        n_g=n_g,
        n_b=n_b,
        L=L,
        M=inertia,
        D_g=damping,
        P_node=P_node,
        load_sensitivity=sens,
        demand=demand,
        gen_power=gen_power,
        gen_buses=tuple(gen_buses),
        name=str(data.get("name", "case")),
    )


def load_default_case() -> GridCase:
    """The bundled IEEE 14-bus case: 5 machines, 14 buses, 20 branches."""
    doc = resources.files("resobs").joinpath("data/ieee14.json").read_text()
    return load_case(json.loads(doc))


def _solve_ll(case: GridCase, rhs: np.ndarray) -> np.ndarray:
    A = case.L_ll_eff
    try:
        sol = scipy.linalg.solve(A, rhs, assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise InvalidModelError("bus block of the Laplacian is singular, cannot reduce") from exc
    if not np.all(np.isfinite(sol)):
        raise InvalidModelError("bus block of the Laplacian is singular, cannot reduce")
    return sol


def kron_reduction(case: GridCase) -> np.ndarray:
    """Eliminate the bus angles: K = L_gg - L_gl L_ll_eff^-1 L_lg."""
    return case.L_gg - case.L_gl @ _solve_ll(case, case.L_lg)


def build_reduced_model(case: GridCase) -> ContinuousLinearSystem:
    """Continuous-time model with state [delta; omega] and input [P_g; P_d].

    Outputs stack the generator frequencies over the measured net bus
    powers; the latter depend on the instantaneous demand, giving the
    nonzero feedthrough block.
    """
    g, nb = case.n_g, case.n_b
    K = kron_reduction(case)
    W_lg = _solve_ll(case, case.L_lg)          # L_ll_eff^-1 L_lg
    Y = W_lg.T                                  # (L_gl L_ll_eff^-1)^T = L_ll_eff^-1 L_lg since symmetric
    S = _solve_ll(case, np.eye(nb))             # L_ll_eff^-1
    Minv = 1.0 / case.M

    A = np.zeros((2 * g, 2 * g))
    A[:g, g:] = np.eye(g)
    A[g:, :g] = -Minv[:, None] * K
    A[g:, g:] = -np.diag(Minv * case.D_g)

    B = np.zeros((2 * g, g + nb))
    B[g:, :g] = np.diag(Minv)
    B[g:, g:] = -Minv[:, None] * (case.L_gl @ S)

    C = np.zeros((g + nb, 2 * g))
    C[:g, g:] = np.eye(g)
    C[g:, :g] = -case.P_node @ W_lg

    D = np.zeros((g + nb, g + nb))
    D[g:, g:] = case.P_node @ S

    return ContinuousLinearSystem(A=A, B=B, C=C, D=D)


def recover_bus_angles(case: GridCase, delta: np.ndarray, P_d: np.ndarray) -> np.ndarray:
    """Algebraic bus angles for given rotor angles and bus injections.

    P_d follows the injection sign convention: consumption is negative.
    """
    delta = np.asarray(delta, dtype=float).reshape(-1)
    P_d = np.asarray(P_d, dtype=float).reshape(-1)
    if delta.size != case.n_g or P_d.size != case.n_b:
        raise InvalidModelError("delta/P_d lengths must match the case dimensions")
    return _solve_ll(case, P_d - case.L_lg @ delta)


def steady_state(case: GridCase, gen_power: np.ndarray | None = None, injection: np.ndarray | None = None):
    """Equilibrium (x0, theta0) of the reduced model under constant inputs.

    injection defaults to the case demand with consumption signed negative.
    """
    P_g = case.gen_power if gen_power is None else np.asarray(gen_power, dtype=float).reshape(-1)
    P_d = case.demand_injection if injection is None else np.asarray(injection, dtype=float).reshape(-1)
    K = kron_reduction(case)
    Y = _solve_ll(case, case.L_lg).T
    delta = scipy.linalg.solve(K, P_g - Y @ P_d, assume_a="sym")
    theta = recover_bus_angles(case, delta, P_d)
    x0 = np.concatenate([delta, np.zeros(case.n_g)])
    return x0, theta


@dataclass
class GridState:
    delta: np.ndarray
    omega: np.ndarray
    theta: np.ndarray


@dataclass
class GridInput:
    P_g: np.ndarray
    P_d: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.P_g, float).reshape(-1), np.asarray(self.P_d, float).reshape(-1)])


@dataclass
class PiConfig:
    """Per-generator PI frequency regulator with an integral clamp.

    The controller acts on the previous sample's measured frequency, so the
    loop carries one sample of delay; the default gains are tuned to keep
    the delayed loop well damped at dt around 0.01.
    """

    kp: float = 1.0
    ki: float = 2.0
    setpoint: float = 0.0
    integral_limit: float = 100.0

    def __post_init__(self) -> None:
        if self.kp < 0 or self.ki < 0:
            raise ConfigurationError("PI gains must be nonnegative")
        if self.integral_limit <= 0:
            raise ConfigurationError("integral_limit must be positive")


def pi_control_step(cfg: PiConfig, integral: np.ndarray, omega: np.ndarray, dt: float):
    """One controller update; returns (P_g, new integral state)."""
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    omega = np.asarray(omega, dtype=float).reshape(-1)
    integral = np.asarray(integral, dtype=float).reshape(-1)
    error = cfg.setpoint - omega
    integral = np.clip(integral + dt * error, -cfg.integral_limit, cfg.integral_limit)
    return cfg.kp * error + cfg.ki * integral, integral


def initial_integral(cfg: PiConfig, gen_power: np.ndarray) -> np.ndarray:
    """Integral state that reproduces the nominal dispatch at zero error."""
    if cfg.ki <= 0:
        raise ConfigurationError("steady-state initialization needs ki > 0")
    return np.asarray(gen_power, dtype=float).reshape(-1) / cfg.ki


@dataclass
class EstimateTrace:
    """Everything one closed-loop run records, sample-aligned."""

    dt: float
    x_true: np.ndarray
    theta: np.ndarray
    y_clean: np.ndarray
    y_meas: np.ndarray
    u: np.ndarray
    attack: np.ndarray
    attack_active: np.ndarray
    residue: np.ndarray
    alarm: np.ndarray
    estimates: dict
    diagnostics: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return self.x_true.shape[0]


def simulate_closed_loop(
    case: GridCase,
    sys_d: DiscreteLinearSystem,
    ctrl: PiConfig,
    demand_profile: np.ndarray,
    horizon_samples: int | None = None,
    attack_fn=None,
    observers=(),
    detector=None,
    prior_provider=None,
    x0: np.ndarray | None = None,
    integral0: np.ndarray | None = None,
) -> EstimateTrace:
    """Run the PI-closed plant and every registered observer side by side.

    demand_profile carries one bus-injection row per sample (consumption
    negative, as in demand_injection).

    Per sample: the controller acts on the previous sample's measured
    frequency, the plant output is formed, the attack (if any) corrupts it,
    the detector scores the corrupted measurement, each observer produces a
    current-state estimate from the corrupted stream, and the plant steps.
    An observer raising an error keeps its last estimate for that sample and
    the failure is recorded; the run continues for the others.
    """
    g = case.n_g
    n = 2 * g
    m = g + case.n_b
    if sys_d.n_states != n or sys_d.n_outputs != m:
        raise InvalidModelError("discrete system dimensions do not match the case")
    demand_profile = np.atleast_2d(np.asarray(demand_profile, dtype=float))
    if demand_profile.shape[1] != case.n_b:
        raise InvalidModelError(f"demand profile must have {case.n_b} columns")
    N = demand_profile.shape[0] if horizon_samples is None else int(horizon_samples)
    if N <= 0:
        raise ConfigurationError("horizon must cover at least one sample")
    if demand_profile.shape[0] < N:
        raise ConfigurationError("demand profile shorter than the simulation horizon")

    if x0 is None:
        x0, _ = steady_state(case)
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    if x.size != n:
        raise InvalidModelError(f"x0 must have {n} entries")
    integral = initial_integral(ctrl, case.gen_power) if integral0 is None else np.asarray(integral0, float).reshape(-1)

    trace = EstimateTrace(
        dt=sys_d.dt,
        x_true=np.zeros((N, n)),
        theta=np.zeros((N, case.n_b)),
        y_clean=np.zeros((N, m)),
        y_meas=np.zeros((N, m)),
        u=np.zeros((N, sys_d.n_inputs)),
        attack=np.zeros((N, m)),
        attack_active=np.zeros(N, dtype=bool),
        residue=np.zeros(N),
        alarm=np.zeros(N, dtype=bool),
        estimates={obs.name: np.zeros((N, n)) for obs in observers},
        diagnostics={obs.name: [] for obs in observers},
        failures={obs.name: [] for obs in observers},
    )

    omega_meas = x[g:].copy()
    for k in range(N):
        P_g, integral = pi_control_step(ctrl, integral, omega_meas, sys_d.dt)
        u = np.concatenate([P_g, demand_profile[k]])
        y_clean = sys_d.C @ x + sys_d.D @ u
        e = np.zeros(m) if attack_fn is None else np.asarray(attack_fn(k, y_clean), dtype=float).reshape(-1)
        y_meas = y_clean + e

        if detector is not None:
            residue, alarm = detector(y_meas, u)
            trace.residue[k] = residue
            trace.alarm[k] = alarm

        prior = None if prior_provider is None else prior_provider(k, y_clean)
        for obs in observers:
            try:
                x_hat = obs.estimate(k, y_meas, u, prior)
                trace.estimates[obs.name][k] = x_hat
            except (ResobsError, np.linalg.LinAlgError) as exc:
                trace.failures[obs.name].append((k, f"{type(exc).__name__}: {exc}"))
                trace.estimates[obs.name][k] = trace.estimates[obs.name][k - 1] if k > 0 else x
            diag = getattr(obs, "last_diagnostics", None)
            if diag is not None:
                trace.diagnostics[obs.name].append(diag)

        trace.x_true[k] = x
        trace.theta[k] = recover_bus_angles(case, x[:g], demand_profile[k])
        trace.y_clean[k] = y_clean
        trace.y_meas[k] = y_meas
        trace.u[k] = u
        trace.attack[k] = e
        trace.attack_active[k] = bool(np.any(e != 0.0))

        omega_meas = y_meas[:g]
        x = sys_d.A @ x + sys_d.B @ u

    return trace
