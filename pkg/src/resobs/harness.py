"""Scenario orchestration: config ingestion, the three-observer closed-loop
comparison, error metrics, and deterministic result emission.

A scenario is described by a JSON document (ScenarioConfig).  run_scenario
builds the grid model, binds the attack and the detector, runs the plant with
every configured observer attached, and reduces the trace to a per-angle
RMS / max-abs table.  With an output directory set it also writes a trace
CSV, a metrics CSV, and a JSON manifest sufficient to rerun the experiment.
"""
from __future__ import annotations

import json
import os
import platform
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__
from .admm import AdmmOperator, SolverSettings
from .attack import AttackPlan, BoundAttack, bind_attack, make_detector
from .csdecode import l1_decode
from .errors import ConfigurationError
from .linsys import DiscreteLinearSystem, HorizonOperators, build_horizon_operators, discretize
from .observer import (
    LuenbergerObserver,
    build_qcbp_operator,
    design_luenberger_gain,
    multi_model_estimate,
)
from .powergrid import (
    EstimateTrace,
    GridCase,
    PiConfig,
    build_reduced_model,
    load_case,
    load_default_case,
    simulate_closed_loop,
    steady_state,
)
from .prior import PriorConfig, synth_prior

SEED_ENV_VAR = "RESOBS_SEED"
OBSERVER_NAMES = ("luenberger", "l1", "multimodel")

_scenario_dir = Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# configuration schema


class PiSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kp: float = 1.0
    ki: float = Field(default=2.0, gt=0)
    setpoint: float = 0.0
    integral_limit: float = Field(default=100.0, gt=0)


class PriorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma_scale: float = Field(default=0.01, gt=0)
    offset_fraction: float = Field(default=0.5, ge=0)
    tau: float = Field(default=0.99, gt=0, lt=1)


class AttackSpec(BaseModel):
    """Attack plan as configured; channel indices refer to measurement rows."""

    model_config = ConfigDict(extra="forbid")

    support: list[int] | None = None
    n_channels: int | None = Field(default=None, ge=1)
    onset: int = Field(default=200, ge=0)
    law: Literal["constant", "ramp", "random"] = "ramp"
    magnitude: float = Field(default=0.2, gt=0)
    ramp_samples: int = Field(default=10, ge=1)
    stealth: bool = True
    stealth_threshold: float = Field(default=0.05, gt=0)
    stealth_margin: float = Field(default=0.9, gt=0, le=1)
    random_bounds: tuple[float, float] = (0.5, 1.5)

    @model_validator(mode="after")
    def _check(self):
        if self.support is not None:
            if len(self.support) == 0:
                raise ValueError("support must not be empty when given")
            if any(c < 0 for c in self.support):
                raise ValueError("support indices must be nonnegative")
        if self.random_bounds[0] > self.random_bounds[1]:
            raise ValueError("random_bounds must be ordered (lo, hi)")
        return self

    def to_plan(self) -> AttackPlan:
        return AttackPlan(
            support=tuple(self.support) if self.support is not None else None,
            n_channels=self.n_channels,
            onset=self.onset,
            law=self.law,
            magnitude=self.magnitude,
            ramp_samples=self.ramp_samples,
            stealth=self.stealth,
            stealth_threshold=self.stealth_threshold,
            stealth_margin=self.stealth_margin,
            random_bounds=self.random_bounds,
        )


class SolverSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    penalty: float = Field(default=1.0, gt=0)
    abs_tol: float = Field(default=1e-9, gt=0)
    rel_tol: float = Field(default=1e-9, gt=0)
    max_iter: int = Field(default=20000, ge=1)
    polish: bool = True

    def to_settings(self) -> SolverSettings:
        return SolverSettings(
            penalty=self.penalty,
            abs_tol=self.abs_tol,
            rel_tol=self.rel_tol,
            max_iter=self.max_iter,
            polish=self.polish,
        )


class ScenarioConfig(BaseModel):
    """Everything a run needs; unknown fields are rejected with field paths."""

    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    case: str | None = None
    dt: float = Field(default=0.01, gt=0)
    T: int = Field(default=10, ge=1)
    run_length: int = Field(default=1000, ge=1)
    seed: int = 0
    demand_variation: float = Field(default=0.02, ge=0)
    detector_threshold: float = Field(default=0.05, gt=0)
    luenberger_contraction: float = Field(default=0.5, gt=0, lt=1)
    observers: list[str] = Field(default_factory=lambda: list(OBSERVER_NAMES))
    metrics_window: Literal["full", "post_onset"] = "full"
    output_dir: str | None = None
    pi: PiSpec = Field(default_factory=PiSpec)
    prior: PriorSpec = Field(default_factory=PriorSpec)
    attack: AttackSpec | None = None
    solver: SolverSpec = Field(default_factory=SolverSpec)

    @model_validator(mode="after")
    def _check(self):
        if not self.observers:
            raise ValueError("at least one observer is required")
        unknown = [o for o in self.observers if o not in OBSERVER_NAMES]
        if unknown:
            raise ValueError(f"unknown observers {unknown}; choose from {OBSERVER_NAMES}")
        if len(set(self.observers)) != len(self.observers):
            raise ValueError("observer list has duplicates")
        if self.attack is not None and self.run_length <= self.attack.onset + self.T:
            raise ValueError(
                f"run_length {self.run_length} must exceed onset + T = "
                f"{self.attack.onset + self.T}"
            )
        return self


def load_scenario_config(source: str | Path | dict) -> ScenarioConfig:
    """Parse a scenario description; RESOBS_SEED (if set) overrides the seed."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            payload = json.load(fh)
    else:
        payload = dict(source)
    cfg = ScenarioConfig.model_validate(payload)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg = cfg.model_copy(update={"seed": int(env_seed)})
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
    return cfg


def bundled_scenario_path(name: str = "ieee14_stealth") -> Path:
    """Path of a scenario config shipped with the package."""
    path = _scenario_dir / f"{name}.json"
    if not path.exists():
        raise ConfigurationError(f"no bundled scenario named {name!r}")
    return path


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsTable:
    """Per-rotor-angle RMS and max-abs error for each observer.

    rms[name][i] and max_abs[name][i] cover angle delta_{i+1} over the half
    open sample window [start, stop).
    """

    observers: tuple
    window: tuple
    rms: dict
    max_abs: dict

    @property
    def n_angles(self) -> int:
        first = self.rms[self.observers[0]]
        return first.shape[0]


def compute_metrics(trace: EstimateTrace, window: tuple | None = None) -> MetricsTable:
    """Reduce a trace to the error table over a sample window (default: all)."""
    N = trace.samples
    start, stop = (0, N) if window is None else (int(window[0]), int(window[1]))
    if not (0 <= start < stop <= N):
        raise ConfigurationError(f"window [{start}, {stop}) invalid for a {N}-sample trace")
    g = trace.x_true.shape[1] // 2
    truth = trace.x_true[start:stop, :g]
    rms = {}
    max_abs = {}
    for name, est in trace.estimates.items():
        err = est[start:stop, :g] - truth
        rms[name] = np.sqrt(np.mean(err**2, axis=0))
        max_abs[name] = np.max(np.abs(err), axis=0)
    return MetricsTable(
        observers=tuple(trace.estimates.keys()),
        window=(start, stop),
        rms=rms,
        max_abs=max_abs,
    )


# ---------------------------------------------------------------------------
# observer adapters


class _LuenbergerBank:
    """Classic output-injection observer; reports the one-step prediction."""

    name = "luenberger"

    def __init__(self, sys_d: DiscreteLinearSystem, x0: np.ndarray, contraction: float):
        gain = design_luenberger_gain(sys_d, contraction)
        self._obs = LuenbergerObserver(sys_d, gain)
        self._x = np.asarray(x0, dtype=float).copy()
        self.last_diagnostics = None

    def estimate(self, k, y, u, prior):
        current = self._x.copy()
        self._x = self._obs.step(current, y, u)
        return current


class _WindowBank:
    """Moving-horizon decoder; model propagation until the window fills."""

    def __init__(
        self,
        name: str,
        sys_d: DiscreteLinearSystem,
        ops: HorizonOperators,
        x0: np.ndarray,
        settings: SolverSettings,
        constrained: bool,
    ):
        self.name = name
        self._sys = sys_d
        self._ops = ops
        self._settings = settings
        self._constrained = constrained
        self._y = deque(maxlen=ops.T)
        self._u = deque(maxlen=ops.T)
        self._x_prop = np.asarray(x0, dtype=float).copy()
        self._warm = None
        self._op = None
        self.last_diagnostics: dict = {}

    def estimate(self, k, y, u, prior):
        self._y.append(np.array(y, dtype=float))
        self._u.append(np.array(u, dtype=float))
        if len(self._y) < self._ops.T:
            current = self._x_prop.copy()
            self._x_prop = self._sys.A @ current + self._sys.B @ u
            self.last_diagnostics = {"mode": "propagate"}
            return current

        y_window = np.asarray(self._y)
        u_window = np.asarray(self._u)[:-1]
        if not self._constrained:
            if self._op is None:
                self._op = AdmmOperator(self._ops.Phi)
            res = l1_decode(
                y_window,
                self._ops,
                u_window,
                u_curr=u,
                settings=self._settings,
                operator=self._op,
            )
            u_stack = u_window.reshape(-1)
            x_now = self._ops.A_pow @ res.x_hat + self._ops.G @ u_stack
            self.last_diagnostics = {
                "mode": "decode",
                "objective": res.objective,
                "iterations": res.iterations,
                "converged": res.converged,
            }
            return x_now

        if prior is None:
            raise ConfigurationError("multi-model observer needs an auxiliary prior")
        if self._op is None:
            # valid across samples while the prior covariance stays fixed
            self._op = build_qcbp_operator(self._ops, prior)
        x_now, _, diag = multi_model_estimate(
            y_window,
            u_window,
            self._ops,
            prior,
            u_curr=u,
            settings=self._settings,
            warm=self._warm,
            operator=self._op,
        )
        self._warm = diag.pop("state")
        diag["mode"] = "decode"
        self.last_diagnostics = diag
        return x_now


def _build_observers(
    cfg: ScenarioConfig,
    sys_d: DiscreteLinearSystem,
    ops: HorizonOperators,
    x0: np.ndarray,
) -> list:
    settings = cfg.solver.to_settings()
    banks = []
    for name in cfg.observers:
        if name == "luenberger":
            banks.append(_LuenbergerBank(sys_d, x0, cfg.luenberger_contraction))
        elif name == "l1":
            banks.append(_WindowBank("l1", sys_d, ops, x0, settings, constrained=False))
        else:
            banks.append(_WindowBank("multimodel", sys_d, ops, x0, settings, constrained=True))
    return banks


# ---------------------------------------------------------------------------
# result emission


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def trace_csv_text(trace: EstimateTrace) -> str:
    """Plot-ready per-sample table; floats carry full precision."""
    g = trace.x_true.shape[1] // 2
    names = list(trace.estimates.keys())
    header = ["sample"]
    header += [f"delta{i+1}_true" for i in range(g)]
    for name in names:
        header += [f"delta{i+1}_{name}" for i in range(g)]
    header += ["residue", "alarm", "attack_active", "attack_channels"]
    lines = [",".join(header)]
    for k in range(trace.samples):
        row = [str(k)]
        row += [_fmt(v) for v in trace.x_true[k, :g]]
        for name in names:
            row += [_fmt(v) for v in trace.estimates[name][k, :g]]
        channels = np.flatnonzero(trace.attack[k])
        row += [
            _fmt(trace.residue[k]),
            str(int(trace.alarm[k])),
            str(int(trace.attack_active[k])),
            ";".join(str(c) for c in channels),
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def metrics_csv_text(table: MetricsTable) -> str:
    lines = ["observer,angle,rms,max_abs"]
    for name in table.observers:
        for i in range(table.n_angles):
            lines.append(f"{name},{i+1},{_fmt(table.rms[name][i])},{_fmt(table.max_abs[name][i])}")
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: EstimateTrace, path: str | Path) -> None:
    Path(path).write_text(trace_csv_text(trace))


def write_metrics_csv(table: MetricsTable, path: str | Path) -> None:
    Path(path).write_text(metrics_csv_text(table))


def _versions() -> dict:
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "resobs": __version__,
    }


def write_manifest(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# orchestration


def _demand_profile(case: GridCase, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    base = case.demand_injection
    jitter = rng.uniform(-1.0, 1.0, size=(cfg.run_length, case.n_b))
    return base * (1.0 + cfg.demand_variation * jitter)


def _execute(cfg: ScenarioConfig) -> tuple[EstimateTrace, MetricsTable, dict]:

    case = load_default_case() if cfg.case is None else load_case(cfg.case)
    sys_d = discretize(build_reduced_model(case), cfg.dt)
    n = sys_d.A.shape[0]
    if cfg.T < n:
        raise ConfigurationError(f"window T={cfg.T} must be at least n={n}")
    ops = build_horizon_operators(sys_d, cfg.T)

    x0, _ = steady_state(case)
    ss = np.random.SeedSequence(cfg.seed)
    rng_attack, rng_demand, rng_prior = (np.random.default_rng(s) for s in ss.spawn(3))

    profile = _demand_profile(case, cfg, rng_demand)
    ctrl = PiConfig(
        kp=cfg.pi.kp,
        ki=cfg.pi.ki,
        setpoint=cfg.pi.setpoint,
        integral_limit=cfg.pi.integral_limit,
    )

    attack_fn: BoundAttack | None = None
    if cfg.attack is not None:
        u0 = np.concatenate([case.gen_power, case.demand_injection])
        y_nominal = sys_d.C @ x0 + sys_d.D @ u0
        attack_fn = bind_attack(cfg.attack.to_plan(), sys_d, y_nominal, case.n_b, rng_attack)

    prior_cfg = PriorConfig(
        sigma_scale=cfg.prior.sigma_scale,
        offset_fraction=cfg.prior.offset_fraction,
        tau=cfg.prior.tau,
    )

    def prior_provider(k, y_clean):
        return synth_prior(y_clean, prior_cfg, rng_prior)

    trace = simulate_closed_loop(
        case,
        sys_d,
        ctrl,
        profile,
        horizon_samples=cfg.run_length,
        attack_fn=attack_fn,
        observers=_build_observers(cfg, sys_d, ops, x0),
        detector=make_detector(sys_d, threshold=cfg.detector_threshold),
        prior_provider=prior_provider if "multimodel" in cfg.observers else None,
        x0=x0,
    )

    if cfg.metrics_window == "post_onset":
        if cfg.attack is None:
            raise ConfigurationError("post_onset metrics need an attack onset")
        window = (cfg.attack.onset, cfg.run_length)
    else:
        window = (0, cfg.run_length)
    metrics = compute_metrics(trace, window)

    manifest = {
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.seed,
        "case": case.name,
        "attack_support": list(attack_fn.support) if attack_fn is not None else [],
        "metrics_window": list(metrics.window),
        "observer_failures": {k: len(v) for k, v in trace.failures.items()},
        "outputs": {"trace": "trace.csv", "metrics": "metrics.csv"},
        "versions": _versions(),
    }
    return trace, metrics, manifest


def run_scenario(cfg: ScenarioConfig | dict | str | Path) -> tuple[EstimateTrace, MetricsTable]:
    """Execute one configured experiment end to end.

    Returns the closed-loop trace and the error table over the configured
    metrics window.  When cfg.output_dir is set, writes trace.csv,
    metrics.csv, and manifest.json into it (created if needed).
    """
    if not isinstance(cfg, ScenarioConfig):
        cfg = load_scenario_config(cfg)
    trace, metrics, manifest = _execute(cfg)
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace, out / "trace.csv")
        write_metrics_csv(metrics, out / "metrics.csv")
        write_manifest(out / "manifest.json", manifest)
    return trace, metrics
