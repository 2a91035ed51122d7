"""Command-line front end.

Every verb is a thin client of the HTTP service: by default requests run
against an in-process application instance (no network, no server process);
--server redirects the same requests to a remote deployment.  Exit codes:
0 success, 1 validation error, 2 solver or transport failure.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ResobsError
from .harness import load_scenario_config

VALIDATION_EXIT = 1
SOLVER_EXIT = 2


class ServiceClient:
    """Uniform POST/GET facade over in-process or remote transport."""

    def __init__(self, server: str | None):
        if server is None:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .api import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)
            self._base = ""
        else:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
            self._base = server

    def post(self, path: str, payload: dict):
        return self._client.post(path, json=payload)

    def get(self, path: str):
        return self._client.get(path)


def _exit_code(status: int) -> int:
    if status < 300:
        return 0
    if status in (400, 404, 422):
        return VALIDATION_EXIT
    return SOLVER_EXIT


def _fail(response) -> None:
    try:
        detail = response.json()
    except ValueError:
        detail = {"detail": response.text}
    click.echo(f"error ({response.status_code}): {json.dumps(detail)}", err=True)
    sys.exit(_exit_code(response.status_code))


def _load_matrix_csv(path: str) -> np.ndarray:
    """Numeric CSV, optional header line."""
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError:
        return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)


@click.group()
@click.option("--server", default=None, metavar="URL", help="Remote service URL (default: in-process).")
@click.pass_context
def main(ctx, server):
    """Resilient observer toolkit."""
    ctx.obj = server


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False), help="Write trace/metrics/manifest here.")
@click.pass_context
def simulate(ctx, config_path, out_dir):
    """Run a closed-loop scenario from a JSON config."""
    try:
        cfg = load_scenario_config(config_path)
    except (ResobsError, ValueError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(VALIDATION_EXIT)

    # outputs are written client-side; never ask the server to touch disk
    cfg = cfg.model_copy(update={"output_dir": None})
    client = ServiceClient(ctx.obj)
    resp = client.post(
        "/simulate",
        {"config": cfg.model_dump(mode="json"), "include_trace": out_dir is not None},
    )
    if resp.status_code != 200:
        _fail(resp)
    body = resp.json()

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(body["trace_csv"])
        (out / "metrics.csv").write_text(body["metrics_csv"])
        manifest = body["manifest"]
        manifest["config"]["output_dir"] = str(out)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    metrics = body["metrics"]
    click.echo(f"window [{metrics['window'][0]}, {metrics['window'][1]}) "
               f"alarms={body['alarm_count']} max_residue={body['max_residue']:.3e}")
    for name in metrics["observers"]:
        rms = max(metrics["rms"][name])
        mab = max(metrics["max_abs"][name])
        click.echo(f"  {name:12s} worst-angle rms={rms:.6e} max-abs={mab:.6e}")
    failed = {k: v for k, v in body["failures"].items() if v}
    if failed:
        click.echo(f"  observer failures: {failed}")
    if out_dir is not None:
        click.echo(f"  wrote trace.csv, metrics.csv, manifest.json to {out_dir}")


@main.command()
@click.option("--system", "system_path", required=True, type=click.Path(dir_okay=False), help="JSON file with A, B, C, D, dt.")
@click.option("--measurements", "meas_path", required=True, type=click.Path(dir_okay=False), help="CSV, one sample per row: y channels then input channels.")
@click.pass_context
def decode(ctx, system_path, meas_path):
    """Window-decode measurements against a system model."""
    try:
        system = json.loads(Path(system_path).read_text())
        data = _load_matrix_csv(meas_path)
    except (ValueError, OSError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(VALIDATION_EXIT)

    m = len(system.get("C", []))
    if m == 0 or data.shape[1] < m:
        click.echo(f"input error: measurement rows have {data.shape[1]} columns, need at least {m}", err=True)
        sys.exit(VALIDATION_EXIT)
    y = data[:, :m]
    payload = {"system": system, "y_window": y.tolist()}
    if data.shape[1] > m:
        u = data[:, m:]
        payload["u_window"] = u[:-1].tolist()
        payload["u_curr"] = u[-1].tolist()

    resp = ServiceClient(ctx.obj).post("/decode", payload)
    if resp.status_code != 200:
        _fail(resp)
    click.echo(json.dumps(resp.json(), indent=2, sort_keys=True))


@main.command()
@click.option("--matrix", "matrix_path", required=True, type=click.Path(dir_okay=False))
@click.option("--sparsity", required=True, type=int)
@click.option("--max-supports", default=10**6, type=int, show_default=True)
@click.pass_context
def rip(ctx, matrix_path, sparsity, max_supports):
    """Certify a restricted-isometry constant by exhaustive enumeration."""
    try:
        F = _load_matrix_csv(matrix_path)
    except (ValueError, OSError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(VALIDATION_EXIT)
    resp = ServiceClient(ctx.obj).post(
        "/rip", {"matrix": F.tolist(), "sparsity": sparsity, "max_supports": max_supports}
    )
    if resp.status_code != 200:
        _fail(resp)
    click.echo(json.dumps(resp.json(), indent=2, sort_keys=True))


@main.command()
@click.option("--configs", "configs_dir", required=True, type=click.Path(file_okay=False))
@click.option("--jobs", default=2, type=click.IntRange(min=1), show_default=True)
@click.option("--out", "out_dir", default="bench_out", type=click.Path(file_okay=False), show_default=True)
@click.pass_context
def bench(ctx, configs_dir, jobs, out_dir):
    """Run every scenario config in a directory on a worker pool."""
    from concurrent.futures import ThreadPoolExecutor

    paths = sorted(Path(configs_dir).glob("*.json"))
    if not paths:
        click.echo(f"no scenario configs in {configs_dir}", err=True)
        sys.exit(VALIDATION_EXIT)
    server = ctx.obj

    def one(path: Path) -> tuple[str, int, str]:
        try:
            cfg = load_scenario_config(path)
        except (ResobsError, ValueError, OSError) as exc:
            return path.stem, VALIDATION_EXIT, f"config error: {exc}"
        cfg = cfg.model_copy(update={"output_dir": None})
        resp = ServiceClient(server).post(
            "/simulate", {"config": cfg.model_dump(mode="json"), "include_trace": True}
        )
        if resp.status_code != 200:
            return path.stem, _exit_code(resp.status_code), f"status {resp.status_code}"
        body = resp.json()
        dest = Path(out_dir) / path.stem
        dest.mkdir(parents=True, exist_ok=True)
        (dest / "trace.csv").write_text(body["trace_csv"])
        (dest / "metrics.csv").write_text(body["metrics_csv"])
        manifest = body["manifest"]
        manifest["config"]["output_dir"] = str(dest)
        (dest / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        worst = max(max(v) for v in body["metrics"]["rms"].values())
        return path.stem, 0, f"ok alarms={body['alarm_count']} worst_rms={worst:.3e}"

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(one, paths))
    code = 0
    for stem, rc, msg in results:
        click.echo(f"{stem}: {msg}")
        code = max(code, rc)
    sys.exit(code)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .api import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
