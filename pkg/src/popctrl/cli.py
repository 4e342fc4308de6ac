"""Thin-client CLI for the lab service.

Every subcommand builds a request and posts it to the FastAPI app. By default
the app runs in-process (no server needed); pass --server URL to talk to a
remote `popctrl serve` instance instead.

Exit codes: 0 success, 2 configuration/validation failure, 3 numerical
failure, 1 anything else.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

from .service.app import app as _app


async def _post_inprocess(path, payload):
    transport = httpx.ASGITransport(app=_app)
    async with httpx.AsyncClient(transport=transport,
                                 base_url="http://popctrl.local",
                                 timeout=None) as client:
        return await client.post(path, json=payload)


def _post(server, path, payload):
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.post(path, json=payload)
    else:
        resp = asyncio.run(_post_inprocess(path, payload))
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except Exception:
        click.echo(f"error: HTTP {resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    click.echo(f"error [{body.get('error_type', '?')}]: {body.get('message')}",
               err=True)
    if body.get("code") == "config" or resp.status_code == 422:
        sys.exit(2)
    if body.get("code") == "numerical":
        sys.exit(3)
    sys.exit(1)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _grid_params(grid_path, n):
    if grid_path:
        return _load_json(grid_path)
    if n:
        return {"n": n}
    return {}


def _emit(doc):
    click.echo(json.dumps(doc, indent=2, default=str))


spec_opt = click.option("--spec", "spec_path", required=True,
                        type=click.Path(exists=True), help="model spec JSON")
grid_opt = click.option("--grid", "grid_path", type=click.Path(exists=True),
                        help="grid params JSON ({n, n_x, n_a, n_s, align})")
n_opt = click.option("-n", "grid_n", type=int, default=None,
                     help="cells per structured axis (shortcut for --grid)")
out_opt = click.option("--out", type=click.Path(), default=None,
                       help="output directory for artifacts")
seed_opt = click.option("--seed", type=int, default=0)
threads_opt = click.option("--threads", type=int, default=1)
server_opt = click.option("--server", default=None,
                          help="remote service URL (default: in-process)")


@click.group()
def main():
    """Numerical laboratory for null controllability of structured
    population models."""


@main.command()
@spec_opt
@server_opt
def derive(spec_path, server):
    """Print transit times, critical sizes, and minimal-time thresholds."""
    _emit(_post(server, "/derive", {"spec": _load_json(spec_path)}))


@main.command()
@spec_opt
@server_opt
def validate(spec_path, server):
    """Run the demographic-hypothesis checks; exit 2 if structure fails."""
    doc = _post(server, "/validate", {"spec": _load_json(spec_path)})
    _emit(doc)
    if not doc["structural_ok"]:
        sys.exit(2)


@main.command()
@spec_opt
@grid_opt
@n_opt
@click.option("--T", "horizon", type=float, default=0.9)
@click.option("--y0-seed", type=int, default=0)
@out_opt
@seed_opt
@server_opt
def simulate(spec_path, grid_path, grid_n, horizon, y0_seed, out, seed, server):
    """Forward run; writes terminal field, newborn trace, mass history."""
    payload = {"spec": _load_json(spec_path), "T": horizon,
               "grid": _grid_params(grid_path, grid_n),
               "y0": {"kind": "smooth_random", "seed": y0_seed or seed},
               "out": out}
    _emit(_post(server, "/simulate", payload))


@main.command()
@spec_opt
@grid_opt
@n_opt
@click.option("--T", "horizon", type=float, default=0.9)
@click.option("--q0", "q0_path", type=click.Path(exists=True), default=None,
              help="binary snapshot for q0 (default: seeded smooth field)")
@click.option("--q0-seed", type=int, default=0)
@out_opt
@seed_opt
@server_opt
def adjoint(spec_path, grid_path, grid_n, horizon, q0_path, q0_seed, out, seed,
            server):
    """Adjoint run; reports observed energy and the vanishing check."""
    q0 = ({"kind": "file", "path": q0_path} if q0_path
          else {"kind": "smooth_random", "seed": q0_seed or seed})
    payload = {"spec": _load_json(spec_path), "T": horizon,
               "grid": _grid_params(grid_path, grid_n), "q0": q0, "out": out}
    _emit(_post(server, "/adjoint", payload))


@main.command()
@spec_opt
@grid_opt
@n_opt
@click.option("--T", "horizon", type=float, default=0.9)
@click.option("--eps", type=float, default=1e-4)
@click.option("--cg-tol", type=float, default=1e-8)
@click.option("--cg-max-iter", type=int, default=300)
@click.option("--y0-seed", type=int, default=0)
@out_opt
@seed_opt
@server_opt
def hum(spec_path, grid_path, grid_n, horizon, eps, cg_tol, cg_max_iter,
        y0_seed, out, seed, server):
    """Penalized-HUM control solve for one (T, eps) pair."""
    payload = {"spec": _load_json(spec_path), "T": horizon, "eps": eps,
               "cg_tol": cg_tol, "cg_max_iter": cg_max_iter,
               "grid": _grid_params(grid_path, grid_n),
               "y0": {"kind": "smooth_random", "seed": y0_seed or seed},
               "out": out}
    _emit(_post(server, "/hum", payload))


@main.command("sweep-time")
@spec_opt
@click.option("--T-list", "t_list", required=True,
              help="comma-separated horizons, e.g. 0.2,0.9")
@click.option("--eps-list", "eps_list", default="1e-2,1e-3,1e-4,1e-5")
@n_opt
@click.option("--cg-max-iter", type=int, default=300)
@out_opt
@seed_opt
@threads_opt
@server_opt
def sweep_time_cmd(spec_path, t_list, eps_list, grid_n, cg_max_iter, out, seed,
                   threads, server):
    """HUM metrics over a (T, eps) product."""
    payload = {"spec": _load_json(spec_path),
               "T_list": [float(v) for v in t_list.split(",")],
               "eps_list": [float(v) for v in eps_list.split(",")],
               "grid_n": grid_n or 33, "seed": seed, "threads": threads,
               "cg_max_iter": cg_max_iter, "out": out}
    _emit(_post(server, "/sweep-time", payload))


@main.command("compare-kernels")
@click.option("--spec-probabilistic", "spec_p", required=True,
              type=click.Path(exists=True))
@click.option("--spec-local", "spec_l", required=True, type=click.Path(exists=True))
@click.option("--T-list", "t_list", required=True)
@click.option("--eps", type=float, default=1e-5)
@n_opt
@click.option("--cg-max-iter", type=int, default=300)
@out_opt
@seed_opt
@threads_opt
@server_opt
def compare_kernels_cmd(spec_p, spec_l, t_list, eps, grid_n, cg_max_iter, out,
                        seed, threads, server):
    """Cost-vs-T curves for a marginal-matched kernel pair."""
    payload = {"spec_probabilistic": _load_json(spec_p),
               "spec_local": _load_json(spec_l),
               "T_list": [float(v) for v in t_list.split(",")],
               "eps": eps, "grid_n": grid_n or 21, "seed": seed,
               "threads": threads, "cg_max_iter": cg_max_iter, "out": out}
    _emit(_post(server, "/compare-kernels", payload))


@main.command("certify-vanishing")
@spec_opt
@click.option("--ladder", default="17,33,65")
@click.option("--T", "horizon", type=float, default=0.8)
@click.option("--tol", type=float, default=1e-6)
@out_opt
@seed_opt
@server_opt
def certify_vanishing_cmd(spec_path, ladder, horizon, tol, out, seed, server):
    """Adjoint-trace vanishing certification on a grid ladder."""
    payload = {"spec": _load_json(spec_path),
               "ladder": [int(v) for v in ladder.split(",")],
               "T": horizon, "tol": tol, "seed": seed, "out": out}
    _emit(_post(server, "/certify-vanishing", payload))


@main.command("oracle-check")
@spec_opt
@click.option("--rungs", default="9,18,27")
@click.option("--n-x", type=int, default=9)
@click.option("--T", "horizon", type=float, default=None)
@out_opt
@server_opt
def oracle_check_cmd(spec_path, rungs, n_x, horizon, out, server):
    """Splitting solver vs unsplit implicit-Euler generator."""
    payload = {"spec": _load_json(spec_path), "n_x": n_x,
               "rungs": [int(v) for v in rungs.split(",")],
               "T": horizon, "out": out}
    _emit(_post(server, "/oracle-check", payload))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8700)
def serve(host, port):
    """Run the service under uvicorn for remote clients."""
    import uvicorn

    uvicorn.run("popctrl.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
