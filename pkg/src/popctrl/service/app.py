"""FastAPI service wrapping the lab: one endpoint per experiment surface.

The CLI talks to this app through an in-process ASGI transport by default;
`popctrl serve` runs it under uvicorn for remote clients. Artifact files
(CSV/JSON reports, field snapshots) are written server-side when a request
carries an `out` directory.
"""

from __future__ import annotations

import os

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..adjoint import observed_energy, run_adjoint, vanishing_check
from ..errors import ConfigError, NumericalError, PopctrlError
from ..experiments import (certify_vanishing, compare_kernels, oracle_ladder,
                           sweep_time)
from ..forward import run
from ..grids import (grid_for_spec, random_smooth_field, read_field_bin,
                     write_field_bin, write_field_csv)
from ..hum import HumOptions, HumSolver
from ..model import (critical_sizes, minimal_time, spec_from_json,
                     transit_times, validate)
from . import schemas as S

app = FastAPI(
    title="popctrl",
    version=__version__,
    description="Null-controllability laboratory for age-size-space "
                "structured population models",
)


@app.exception_handler(PopctrlError)
async def _popctrl_error(request: Request, exc: PopctrlError):
    status = 422 if isinstance(exc, ConfigError) else 500
    kind = "config" if isinstance(exc, ConfigError) else (
        "numerical" if isinstance(exc, NumericalError) else "internal")
    return JSONResponse(status_code=status,
                        content={"code": kind, "message": str(exc),
                                 "error_type": type(exc).__name__})


def _spec(doc):
    return spec_from_json(doc)


def _grid(spec, params: S.GridParams, T: float):
    return grid_for_spec(spec, params.n, T, n_x=params.n_x, n_a=params.n_a,
                         n_s=params.n_s, align=params.align)


def _initial(field: S.InitialField, grid, dirichlet: bool):
    if field.kind == "smooth_random":
        rng = np.random.default_rng(field.seed)
        return random_smooth_field(grid, rng, n_modes=field.modes,
                                   dirichlet_x=dirichlet)
    if field.kind == "constant":
        return grid.field(np.full(grid.shape, field.value))
    if field.kind == "file":
        return read_field_bin(field.path, grid)
    raise ConfigError(f"unknown initial-field kind {field.kind!r}")


def _outdir(path):
    if path:
        os.makedirs(path, exist_ok=True)
    return path


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/derive", response_model=S.DeriveResponse)
def derive(req: S.DeriveRequest):
    spec = _spec(req.spec)
    table = spec.table()
    times = transit_times(spec, table=table)
    crit = critical_sizes(spec, table=table)
    rep = validate(spec)
    return S.DeriveResponse(
        transit=times.to_json(),
        critical=crit.to_json(),
        threshold_probabilistic=minimal_time(spec, "probabilistic", table=table),
        threshold_local=minimal_time(spec, "local", table=table),
        hypothesis=rep.hypothesis,
    )


@app.post("/validate", response_model=S.ValidateResponse)
def validate_spec(req: S.DeriveRequest):
    spec = _spec(req.spec)
    rep = validate(spec)
    doc = rep.to_json()
    return S.ValidateResponse(structural_ok=rep.structural_ok,
                              checks=doc["checks"], hypothesis=rep.hypothesis)


@app.post("/simulate", response_model=S.SimulateResponse)
def simulate(req: S.SimulateRequest):
    spec = _spec(req.spec)
    grid = _grid(spec, req.grid, req.T)
    y0 = _initial(req.y0, grid, spec.diffusion.is_degenerate)
    result = run(spec, grid, y0)
    files = []
    out = _outdir(req.out)
    if out:
        write_field_bin(result.terminal, os.path.join(out, "terminal.bin"))
        write_field_csv(result.terminal, os.path.join(out, "terminal.csv"))
        np.savetxt(os.path.join(out, "mass_history.csv"),
                   np.column_stack([np.arange(result.mass_history.size) * grid.dt,
                                    result.mass_history]),
                   delimiter=",", header="t,mass", comments="")
        np.save(os.path.join(out, "newborn_trace.npy"), result.trace_newborn)
        files = ["terminal.bin", "terminal.csv", "mass_history.csv",
                 "newborn_trace.npy"]
        files = [os.path.join(out, f) for f in files]
    from ..grids import norm as w_norm
    return S.SimulateResponse(
        terminal_norm=w_norm(result.terminal),
        initial_norm=w_norm(y0),
        mass_history=[float(v) for v in result.mass_history],
        n_steps=grid.n_steps, dt=grid.dt, out_files=files,
    )


@app.post("/adjoint", response_model=S.AdjointResponse)
def adjoint(req: S.AdjointRequest):
    spec = _spec(req.spec)
    grid = _grid(spec, req.grid, req.T)
    q0 = _initial(req.q0, grid, spec.diffusion.is_degenerate)
    arun = run_adjoint(spec, grid, q0)
    vann = None
    if req.vanishing:
        crit = critical_sizes(spec)
        if crit.alpha_star is not None:
            rep = vanishing_check(arun, crit, transit_times(spec), spec, grid)
            vann = rep.to_json()
    files = []
    out = _outdir(req.out)
    if out:
        write_field_bin(arun.terminal, os.path.join(out, "terminal.bin"))
        np.save(os.path.join(out, "renewal_trace.npy"), arun.renewal_trace)
        if vann is not None:
            import json as _json
            with open(os.path.join(out, "vanishing.json"), "w") as fh:
                _json.dump(vann, fh, indent=2)
            files.append(os.path.join(out, "vanishing.json"))
        files = [os.path.join(out, "terminal.bin"),
                 os.path.join(out, "renewal_trace.npy")] + files
    from ..grids import norm as w_norm
    return S.AdjointResponse(
        terminal_norm=w_norm(arun.terminal),
        observed_energy=float(observed_energy(arun)[-1]),
        n_steps=grid.n_steps, dt=grid.dt, vanishing=vann, out_files=files,
    )


@app.post("/hum", response_model=S.HumResponse)
def hum(req: S.HumRequest):
    spec = _spec(req.spec)
    grid = _grid(spec, req.grid, req.T)
    y0 = _initial(req.y0, grid, spec.diffusion.is_degenerate)
    solver = HumSolver(spec, grid)
    res = solver.solve(y0, HumOptions(eps=req.eps, cg_tol=req.cg_tol,
                                      cg_max_iter=req.cg_max_iter))
    files = []
    out = _outdir(req.out)
    if out:
        import json as _json
        with open(os.path.join(out, "result.json"), "w") as fh:
            _json.dump(res.to_json(), fh, indent=2)
        np.save(os.path.join(out, "control.npy"), res.control)
        files = [os.path.join(out, "result.json"), os.path.join(out, "control.npy")]
    return S.HumResponse(
        terminal_norm=res.terminal_norm, terminal_ratio=res.terminal_ratio,
        control_cost=res.control_cost, cg_iters=res.cg_iters,
        gramian_applications=res.gramian_applications, eps=res.eps,
        stalled=res.stalled, residual_history=list(res.residual_history),
        out_files=files,
    )


def _report_response(report, out, base):
    files = []
    if out:
        _outdir(out)
        report.write(os.path.join(out, base))
        files = [os.path.join(out, base + ".json"), os.path.join(out, base + ".csv")]
    doc = report.to_json()
    doc["out_files"] = files
    return S.ReportResponse(**doc)


@app.post("/sweep-time", response_model=S.ReportResponse)
def sweep_time_ep(req: S.SweepRequest):
    spec = _spec(req.spec)
    report = sweep_time(spec, req.T_list, req.eps_list, grid_n=req.grid_n,
                        seed=req.seed, cg_tol=req.cg_tol,
                        cg_max_iter=req.cg_max_iter, threads=req.threads)
    return _report_response(report, req.out, "sweep_time")


@app.post("/compare-kernels", response_model=S.ReportResponse)
def compare_kernels_ep(req: S.CompareKernelsRequest):
    spec_p = _spec(req.spec_probabilistic)
    spec_l = _spec(req.spec_local)
    report = compare_kernels(spec_p, spec_l, req.T_list, eps=req.eps,
                             grid_n=req.grid_n, seed=req.seed,
                             cg_tol=req.cg_tol, cg_max_iter=req.cg_max_iter,
                             threads=req.threads)
    return _report_response(report, req.out, "compare_kernels")


@app.post("/certify-vanishing", response_model=S.ReportResponse)
def certify_vanishing_ep(req: S.CertifyVanishingRequest):
    spec = _spec(req.spec)
    report = certify_vanishing(spec, ladder=tuple(req.ladder), T=req.T,
                               seed=req.seed, tol=req.tol)
    return _report_response(report, req.out, "certify_vanishing")


@app.post("/oracle-check", response_model=S.ReportResponse)
def oracle_check_ep(req: S.OracleCheckRequest):
    spec = _spec(req.spec)
    report = oracle_ladder(spec, n_x=req.n_x, rungs=tuple(req.rungs), T=req.T)
    return _report_response(report, req.out, "oracle_check")
