"""HTTP service exposing the observer library.

Endpoints mirror the CLI verbs: /simulate runs a configured closed-loop
scenario, /decode runs the window decoder on supplied matrices, /rip
certifies a restricted-isometry constant.  Request bodies are validated by
pydantic; domain errors map to 400, degenerate-geometry and solver failures
to 409/502 so clients can distinguish bad input from a failed computation.
"""
from __future__ import annotations

from typing import Literal

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .csdecode import l1_decode, rip_constant_bruteforce
from .errors import (
    ConfigurationError,
    InfeasiblePriorError,
    InvalidModelError,
    OracleTooLargeError,
    ResobsError,
    SolverFailureError,
)
from .harness import (
    MetricsTable,
    ScenarioConfig,
    SolverSpec,
    _execute,
    metrics_csv_text,
    trace_csv_text,
)
from .linsys import DiscreteLinearSystem, build_horizon_operators

Matrix = list[list[float]]
Vector = list[float]


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ScenarioConfig
    include_trace: bool = False


class MetricsPayload(BaseModel):
    observers: list[str]
    window: tuple[int, int]
    rms: dict[str, Vector]
    max_abs: dict[str, Vector]

    @classmethod
    def from_table(cls, table: MetricsTable) -> "MetricsPayload":
        return cls(
            observers=list(table.observers),
            window=table.window,
            rms={k: v.tolist() for k, v in table.rms.items()},
            max_abs={k: v.tolist() for k, v in table.max_abs.items()},
        )


class SimulateResponse(BaseModel):
    metrics: MetricsPayload
    manifest: dict
    alarm_count: int
    max_residue: float
    failures: dict[str, int]
    trace_csv: str | None = None
    metrics_csv: str | None = None


class SystemPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    A: Matrix
    B: Matrix
    C: Matrix
    D: Matrix
    dt: float = Field(default=1.0, gt=0)


class DecodeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    system: SystemPayload
    y_window: Matrix
    u_window: Matrix | None = None
    u_curr: Vector | None = None
    solver: SolverSpec = Field(default_factory=SolverSpec)


class DecodeResponse(BaseModel):
    x_hat: Vector
    e_hat: Matrix
    objective: float
    iterations: int
    converged: bool
    support: list[int]
    unique: bool | None


class RipRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    matrix: Matrix
    sparsity: int = Field(ge=1)
    max_supports: int = Field(default=10**6, ge=1)


class RipResponse(BaseModel):
    delta: float
    sparsity: int
    supports_checked: int
    certified: bool
    threshold: float


class HealthResponse(BaseModel):
    status: Literal["ok"]
    version: str


def create_app() -> FastAPI:
    app = FastAPI(title="resobs", version=__version__)

    @app.exception_handler(ResobsError)
    async def _domain_error(request: Request, exc: ResobsError):
        # input problems are the client's fault; solver trouble is not
        if isinstance(exc, (SolverFailureError, OracleTooLargeError)):
            status = 502
        elif isinstance(exc, InfeasiblePriorError):
            status = 409
        else:
            status = 400
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        trace, metrics, manifest = _execute(req.config)
        return SimulateResponse(
            metrics=MetricsPayload.from_table(metrics),
            manifest=manifest,
            alarm_count=int(trace.alarm.sum()),
            max_residue=float(trace.residue.max()),
            failures={k: len(v) for k, v in trace.failures.items()},
            trace_csv=trace_csv_text(trace) if req.include_trace else None,
            metrics_csv=metrics_csv_text(metrics) if req.include_trace else None,
        )

    @app.post("/decode", response_model=DecodeResponse)
    def decode(req: DecodeRequest):
        sys_d = DiscreteLinearSystem(
            A=np.asarray(req.system.A, dtype=float),
            B=np.asarray(req.system.B, dtype=float),
            C=np.asarray(req.system.C, dtype=float),
            D=np.asarray(req.system.D, dtype=float),
            dt=req.system.dt,
        )
        y = np.asarray(req.y_window, dtype=float)
        T = y.shape[0]
        ops = build_horizon_operators(sys_d, T)
        if req.u_window is not None:
            u = np.asarray(req.u_window, dtype=float)
        else:
            u = np.zeros((T - 1, sys_d.B.shape[1]))
        u_curr = None if req.u_curr is None else np.asarray(req.u_curr, dtype=float)
        res = l1_decode(y, ops, u, u_curr=u_curr, settings=req.solver.to_settings())
        return DecodeResponse(
            x_hat=res.x_hat.tolist(),
            e_hat=res.e_hat.reshape(T, -1).tolist(),
            objective=res.objective,
            iterations=res.iterations,
            converged=res.converged,
            support=sorted(int(i) for i in res.support),
            unique=res.unique,
        )

    @app.post("/rip", response_model=RipResponse)
    def rip(req: RipRequest):
        report = rip_constant_bruteforce(
            np.asarray(req.matrix, dtype=float), req.sparsity, max_supports=req.max_supports
        )
        threshold = 1.0 / np.sqrt(2.0)
        return RipResponse(
            delta=report.delta,
            sparsity=report.sparsity,
            supports_checked=report.supports_checked,
            certified=bool(report.delta < threshold),
            threshold=float(threshold),
        )

    return app


app = create_app()
