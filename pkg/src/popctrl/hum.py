"""Penalized Hilbert Uniqueness Method.

The control-to-terminal map is F u = dt * sum_k S^{N-1-k} (m u_k); its exact
weighted adjoint is (F* q)_k = m (S*)^{N-1-k} q, i.e. the control at forward
step k reads the adjoint state after N-1-k adjoint steps (discrete form of
u(t) = B* q(T - t)). The Gramian Lambda = F F* is symmetric positive
semidefinite by construction, and conjugate gradients solve

    (Lambda + eps I) phi* = -y_free(T),   u = F* phi*.

The penalty eps > 0 is the point: the discrete Gramian is severely
ill-conditioned below the minimal controllability time, and the eps-family
of costs is what exposes the threshold (bounded cost above it, blow-up
below).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .forward import SplitStepper
from .grids import Grid, StateField, random_smooth_field
from .model import ModelSpec

__all__ = [
    "HumOptions", "HumResult", "HumSolver",
    "gramian_apply", "solve_control", "adjointness_check", "observability_ratio",
]


@dataclass(frozen=True)
class HumOptions:
    eps: float
    cg_tol: float = 1e-8
    cg_max_iter: int = 300
    record_history: bool = True
    diag_scale: Optional[np.ndarray] = None   # optional CG scaling, off by default

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("penalty eps must be > 0")
        if not 0.0 < self.cg_tol < 1.0:
            raise ValueError("cg_tol must lie in (0, 1)")


@dataclass
class HumResult:
    control: np.ndarray            # (n_steps, control box)
    terminal_norm: float
    terminal_ratio: float
    control_cost: float
    cg_iters: int
    gramian_applications: int
    eps: float
    stalled: bool
    y0_norm: float
    residual_history: list = field(default_factory=list)
    phi: Optional[np.ndarray] = None

    def to_json(self, include_control=False):
        doc = {
            "terminal_norm": self.terminal_norm,
            "terminal_ratio": self.terminal_ratio,
            "control_cost": self.control_cost,
            "cg_iters": self.cg_iters,
            "gramian_applications": self.gramian_applications,
            "eps": self.eps,
            "stalled": self.stalled,
            "y0_norm": self.y0_norm,
            "residual_history": list(self.residual_history),
        }
        if include_control:
            doc["control"] = self.control.tolist()
        return doc


class HumSolver:
    """Caches the stepper and exposes the HUM building blocks."""

    def __init__(self, spec: ModelSpec, grid: Grid, stepper: SplitStepper = None):
        self.spec = spec
        self.grid = grid
        self.stepper = stepper or SplitStepper(spec, grid)
        self.gramian_applications = 0

    # -- building blocks ---------------------------------------------------

    def adjoint_snapshots(self, phi: np.ndarray) -> np.ndarray:
        """Masked adjoint states (S*)^i phi for i = 0..N-1."""
        st = self.stepper
        n = self.grid.n_steps
        snaps = np.zeros((n,) + st.control_box_shape())
        q = phi.copy()
        if st.diffusion.dirichlet:
            q[0] = 0.0
            q[-1] = 0.0
        for i in range(n):
            snaps[i] = q[st.mask]
            if i < n - 1:
                q = st.adjoint_step(q)
        return snaps

    def control_from_phi(self, phi: np.ndarray) -> np.ndarray:
        """u = F* phi: time-reversed masked adjoint states."""
        return self.adjoint_snapshots(phi)[::-1].copy()

    def forward_terminal(self, y0: Optional[np.ndarray], control=None) -> np.ndarray:
        st = self.stepper
        y = np.zeros(self.grid.shape) if y0 is None else y0.copy()
        if st.diffusion.dirichlet:
            y[0] = 0.0
            y[-1] = 0.0
        for k in range(self.grid.n_steps):
            u = control[k] if control is not None else None
            y = st.step(y, u)
        return y

    def gramian(self, phi: np.ndarray) -> np.ndarray:
        """Lambda phi = F F* phi (one adjoint and one forward solve)."""
        self.gramian_applications += 1
        u = self.control_from_phi(phi)
        return self.forward_terminal(None, control=u)

    def control_cost(self, u: np.ndarray) -> float:
        st = self.stepper
        sx, _, _ = st.mask
        w = self.grid.w_x[sx][:, None, None] * self.grid.da * self.grid.ds
        return float(self.grid.dt * np.sum(u**2 * w[None, :, :, :]))

    # -- solve --------------------------------------------------------------

    def solve(self, y0: StateField, opts: HumOptions,
              phi0: Optional[np.ndarray] = None) -> HumResult:
        st = self.stepper
        y0v = y0.values
        y_free = self.forward_terminal(y0v)
        rhs = -y_free
        self.gramian_applications = 0

        dot = st.w_inner
        phi = np.zeros_like(rhs) if phi0 is None else phi0.copy()
        if phi0 is None:
            r = rhs.copy()
        else:
            r = rhs - (self.gramian(phi) + opts.eps * phi)
        p = r.copy()
        rs = dot(r, r)
        rhs_norm = np.sqrt(max(dot(rhs, rhs), 0.0))
        history = []
        iters = 0
        stalled = False
        if rhs_norm == 0.0:
            phi = np.zeros_like(rhs)
        else:
            while True:
                rel = np.sqrt(max(rs, 0.0)) / rhs_norm
                if opts.record_history:
                    history.append(rel)
                if rel <= opts.cg_tol:
                    break
                if iters >= opts.cg_max_iter:
                    stalled = True
                    break
                Ap = self.gramian(p) + opts.eps * p
                alpha = rs / dot(p, Ap)
                phi += alpha * p
                r -= alpha * Ap
                rs_new = dot(r, r)
                p = r + (rs_new / rs) * p
                rs = rs_new
                iters += 1

        u = self.control_from_phi(phi)
        terminal = self.forward_terminal(y0v, control=u)
        t_norm = st.w_norm(terminal)
        y0_norm = st.w_norm(y0v)
        return HumResult(
            control=u,
            terminal_norm=t_norm,
            terminal_ratio=t_norm / y0_norm if y0_norm > 0 else 0.0,
            control_cost=self.control_cost(u),
            cg_iters=iters,
            gramian_applications=self.gramian_applications,
            eps=opts.eps,
            stalled=stalled,
            y0_norm=y0_norm,
            residual_history=history,
            phi=phi,
        )


# ---------------------------------------------------------------------------
# functional wrappers


def gramian_apply(phi: StateField, spec: ModelSpec, grid: Grid,
                  solver: HumSolver = None) -> StateField:
    hs = solver or HumSolver(spec, grid)
    return StateField(hs.gramian(phi.values), grid, time=grid.T)


def solve_control(spec: ModelSpec, grid: Grid, y0: StateField, opts: HumOptions,
                  solver: HumSolver = None, phi0=None) -> HumResult:
    hs = solver or HumSolver(spec, grid)
    return hs.solve(y0, opts, phi0=phi0)


def adjointness_check(spec: ModelSpec, grid: Grid, n_trials: int = 20,
                      seed: int = 0, solver: HumSolver = None) -> float:
    """Max relative defect |<F u, q> - <u, F* q>| over random (u, q) pairs."""
    hs = solver or HumSolver(spec, grid)
    st = hs.stepper
    rng = np.random.default_rng(seed)
    box = (grid.n_steps,) + st.control_box_shape()
    sx, _, _ = st.mask
    w_u = grid.w_x[sx][:, None, None] * grid.da * grid.ds
    worst = 0.0
    dirichlet = st.diffusion.dirichlet
    for _ in range(n_trials):
        u = rng.standard_normal(box)
        q = random_smooth_field(grid, rng, dirichlet_x=dirichlet, normalize=False).values
        Fu = hs.forward_terminal(None, control=u)
        lhs = st.w_inner(Fu, q)
        Fstar_q = hs.control_from_phi(q)
        rhs = float(grid.dt * np.sum(u * Fstar_q * w_u[None]))
        scale = abs(lhs) + abs(rhs)
        defect = 0.0 if scale == 0.0 else abs(lhs - rhs) / scale
        worst = max(worst, defect)
    return worst


def observability_ratio(spec: ModelSpec, grid: Grid, n_samples: int = 10,
                        seed: int = 0, solver: HumSolver = None) -> dict:
    """min over random unit q0 of observed_energy(T) / ||q(T)||^2.

    A desk-scale lower proxy for 1/K_T in the final-state observability
    inequality; never asserted against an analytic constant.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    hs = solver or HumSolver(spec, grid)
    st = hs.stepper
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        q0 = random_smooth_field(grid, rng, dirichlet_x=st.diffusion.dirichlet)
        q = q0.values.copy()
        energy = 0.0
        for _i in range(grid.n_steps):
            block = q[st.mask]
            sx, _, _ = st.mask
            w = grid.w_x[sx][:, None, None] * grid.da * grid.ds
            energy += grid.dt * float(np.sum(block**2 * w))
            q = st.adjoint_step(q)
        terminal_sq = st.w_inner(q, q)
        ratio = float("inf") if terminal_sq == 0.0 else energy / terminal_sq
        samples.append(ratio)
    return {"min_ratio": min(samples), "samples": samples}
