"""Pydantic request/response models for the lab service."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class SpecEnvelope(BaseModel):
    """A model-spec JSON document (see README for the schema)."""

    spec: Dict[str, Any]


class GridParams(BaseModel):
    n: int = 33
    n_x: Optional[int] = None
    n_a: Optional[int] = None
    n_s: Optional[int] = None
    align: bool = False


class InitialField(BaseModel):
    """How to build y0/q0: a seeded smooth random field, a constant, or a
    binary snapshot file previously written by the service."""

    kind: str = "smooth_random"   # smooth_random | constant | file
    seed: int = 0
    modes: int = 4
    value: float = 1.0
    path: Optional[str] = None


class DeriveRequest(SpecEnvelope):
    pass


class DeriveResponse(BaseModel):
    transit: Dict[str, float]
    critical: Dict[str, Optional[float]]
    threshold_probabilistic: float
    threshold_local: float
    hypothesis: Dict[str, bool]


class ValidateResponse(BaseModel):
    structural_ok: bool
    checks: List[Dict[str, Any]]
    hypothesis: Dict[str, bool]


class SimulateRequest(SpecEnvelope):
    grid: GridParams = GridParams()
    T: float = 0.9
    y0: InitialField = InitialField()
    out: Optional[str] = None


class SimulateResponse(BaseModel):
    terminal_norm: float
    initial_norm: float
    mass_history: List[float]
    n_steps: int
    dt: float
    out_files: List[str] = Field(default_factory=list)


class AdjointRequest(SpecEnvelope):
    grid: GridParams = GridParams()
    T: float = 0.9
    q0: InitialField = InitialField()
    out: Optional[str] = None
    vanishing: bool = True


class AdjointResponse(BaseModel):
    terminal_norm: float
    observed_energy: float
    n_steps: int
    dt: float
    vanishing: Optional[Dict[str, Any]] = None
    out_files: List[str] = Field(default_factory=list)


class HumRequest(SpecEnvelope):
    grid: GridParams = GridParams()
    T: float = 0.9
    eps: float = 1e-4
    cg_tol: float = 1e-8
    cg_max_iter: int = 300
    y0: InitialField = InitialField()
    out: Optional[str] = None


class HumResponse(BaseModel):
    terminal_norm: float
    terminal_ratio: float
    control_cost: float
    cg_iters: int
    gramian_applications: int
    eps: float
    stalled: bool
    residual_history: List[float]
    out_files: List[str] = Field(default_factory=list)


class SweepRequest(SpecEnvelope):
    T_list: List[float]
    eps_list: List[float]
    grid_n: int = 33
    seed: int = 0
    cg_tol: float = 1e-8
    cg_max_iter: int = 300
    threads: int = 1
    out: Optional[str] = None


class CompareKernelsRequest(BaseModel):
    spec_probabilistic: Dict[str, Any]
    spec_local: Dict[str, Any]
    T_list: List[float]
    eps: float = 1e-5
    grid_n: int = 21
    seed: int = 0
    cg_tol: float = 1e-8
    cg_max_iter: int = 300
    threads: int = 1
    out: Optional[str] = None


class CertifyVanishingRequest(SpecEnvelope):
    ladder: List[int] = [17, 33, 65]
    T: float = 0.8
    seed: int = 0
    tol: float = 1e-6
    out: Optional[str] = None


class OracleCheckRequest(SpecEnvelope):
    n_x: int = 9
    rungs: List[int] = [9, 18, 27]
    T: Optional[float] = None
    out: Optional[str] = None


class ReportResponse(BaseModel):
    kind: str
    fingerprint: str
    environment: Dict[str, Any]
    metadata: Dict[str, Any]
    columns: Optional[List[str]] = None
    rows: List[Dict[str, Any]]
    out_files: List[str] = Field(default_factory=list)


class ErrorBody(BaseModel):
    code: str
    message: str
