"""Resilient state observation for linear systems under sparse sensor attacks.

Layers, bottom up: linsys (models, stacked-window operators, annihilator),
admm (the shared l1 splitting solver), csdecode (sparse-error decoding and
its recovery certificates), prior (auxiliary-model credible sets), observer
(the constrained decoder and the classical baseline), powergrid (swing-model
reduction and the closed-loop plant), attack (stealthy corruption and bad
data detection), harness (scenario orchestration).  api/cli expose the
toolkit over HTTP and the command line.
"""

__version__ = "0.1.0"

from .admm import AdmmOperator, SolverSettings, WarmState, solve_l1_admm
from .attack import (
    AttackPlan,
    BoundAttack,
    ResidueReport,
    bdd_residue_test,
    bind_attack,
    generate_fdia,
    make_detector,
    residue_value,
    select_support,
    stealth_direction,
)
from .csdecode import (
    DecodeResult,
    RipReport,
    best_s_term,
    correctability_fixed,
    correctability_varying,
    l0_decode_bruteforce,
    l1_decode,
    rip_constant_bruteforce,
    sat,
    theorem1_bound,
    theorem1_constant,
)
from .errors import (
    AnnihilatorUnavailableError,
    BoundInapplicableError,
    ConfigurationError,
    InfeasiblePriorError,
    InvalidGainError,
    InvalidModelError,
    OracleTooLargeError,
    PriorDegenerateError,
    ResobsError,
    SolverFailureError,
)
from .harness import (
    AttackSpec,
    MetricsTable,
    PriorSpec,
    ScenarioConfig,
    SolverSpec,
    bundled_scenario_path,
    compute_metrics,
    load_scenario_config,
    run_scenario,
    write_manifest,
    write_metrics_csv,
    write_trace_csv,
)
from .linsys import (
    ContinuousLinearSystem,
    DiscreteLinearSystem,
    HorizonOperators,
    build_horizon_operators,
    discretize,
    is_observable,
    measurement_offset,
    propagate_estimate,
    simulate_window,
    stack_window,
)
from .observer import (
    LuenbergerObserver,
    QcbpProblem,
    QcbpSolution,
    Theorem2Constants,
    build_qcbp_operator,
    design_luenberger_gain,
    luenberger_step,
    multi_model_estimate,
    solve_qcbp,
    theorem2_bound,
    theorem2_constants,
)
from .powergrid import (
    EstimateTrace,
    GridCase,
    GridInput,
    GridState,
    PiConfig,
    build_reduced_model,
    initial_integral,
    kron_reduction,
    laplacian_from_branches,
    load_case,
    load_default_case,
    pi_control_step,
    recover_bus_angles,
    simulate_closed_loop,
    steady_state,
)
from .prior import (
    AuxiliaryPrior,
    PriorConfig,
    chi2_quantile,
    mahalanobis_sq,
    max_singular_value,
    prior_from_json,
    prior_to_json,
    synth_prior,
)

__all__ = [
    "AdmmOperator",
    "AnnihilatorUnavailableError",
    "AttackPlan",
    "AttackSpec",
    "AuxiliaryPrior",
    "BoundAttack",
    "BoundInapplicableError",
    "ConfigurationError",
    "ContinuousLinearSystem",
    "DecodeResult",
    "DiscreteLinearSystem",
    "EstimateTrace",
    "GridCase",
    "GridInput",
    "GridState",
    "HorizonOperators",
    "InfeasiblePriorError",
    "InvalidGainError",
    "InvalidModelError",
    "LuenbergerObserver",
    "MetricsTable",
    "OracleTooLargeError",
    "PiConfig",
    "PriorConfig",
    "PriorDegenerateError",
    "PriorSpec",
    "QcbpProblem",
    "QcbpSolution",
    "ResidueReport",
    "ResobsError",
    "RipReport",
    "ScenarioConfig",
    "SolverFailureError",
    "SolverSettings",
    "SolverSpec",
    "Theorem2Constants",
    "WarmState",
    "bdd_residue_test",
    "best_s_term",
    "bind_attack",
    "build_horizon_operators",
    "build_qcbp_operator",
    "build_reduced_model",
    "bundled_scenario_path",
    "chi2_quantile",
    "compute_metrics",
    "correctability_fixed",
    "correctability_varying",
    "design_luenberger_gain",
    "discretize",
    "generate_fdia",
    "initial_integral",
    "is_observable",
    "kron_reduction",
    "l0_decode_bruteforce",
    "l1_decode",
    "laplacian_from_branches",
    "load_case",
    "load_default_case",
    "load_scenario_config",
    "luenberger_step",
    "mahalanobis_sq",
    "make_detector",
    "max_singular_value",
    "measurement_offset",
    "multi_model_estimate",
    "pi_control_step",
    "prior_from_json",
    "prior_to_json",
    "propagate_estimate",
    "recover_bus_angles",
    "residue_value",
    "rip_constant_bruteforce",
    "run_scenario",
    "sat",
    "select_support",
    "simulate_closed_loop",
    "simulate_window",
    "solve_l1_admm",
    "solve_qcbp",
    "stack_window",
    "steady_state",
    "stealth_direction",
    "synth_prior",
    "theorem1_bound",
    "theorem1_constant",
    "theorem2_bound",
    "theorem2_constants",
    "write_manifest",
    "write_metrics_csv",
    "write_trace_csv",
]
