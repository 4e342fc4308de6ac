"""Adjoint solver: the exact algebraic adjoint of the forward stepper.

The adjoint system runs forward in its own time variable from data q0; each
step applies the weighted transposes of the forward sub-steps in reverse
order (diffusion, then transposed transport plus the nonlocal renewal
source). "Adjoint of the discretization" beats "discretization of the
adjoint": the HUM conjugate gradient needs a Gramian that is symmetric
positive semidefinite to machine precision.

The renewal trace q(x, 0, s, t) is the first age-cell slice; with the
default aligned grid the transposed transport moves values one cell down in
age and size per step, so the trace is exactly the transported field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfig, KernelMismatch, MissingCriticalSize
from .forward import RenewalOperator, SplitStepper
from .grids import Grid, StateField, region_slices
from .model import CriticalSizes, ModelSpec, TransitTimes

__all__ = [
    "AdjointRun", "VanishingReport",
    "run_adjoint", "nonlocal_source", "vanishing_check", "observed_energy",
]


@dataclass
class AdjointRun:
    """Artifacts of one adjoint solve."""

    terminal: StateField
    renewal_trace: np.ndarray        # (n_steps + 1, n_x, n_s), first age cell
    observed_energy: np.ndarray      # (n_steps + 1,), cumulative over energy region
    energy_region: object
    q0_norm: float
    masked_snapshots: Optional[np.ndarray] = None   # (n_steps, control box)
    config: dict = field(default_factory=dict)


def run_adjoint(spec: ModelSpec, grid: Grid, q0: StateField,
                stepper: SplitStepper = None, energy_region=None,
                record_masked: bool = False, record_trace: bool = True) -> AdjointRun:
    """Advance the adjoint system N steps from data q0.

    observed_energy accumulates dt * ||q restricted to energy_region||^2 per
    step (default region: the spec's control region), i.e. exactly the
    quadratic form of the HUM Gramian.
    """
    st = stepper or SplitStepper(spec, grid)
    region = energy_region if energy_region is not None else spec.control
    e_slices = region_slices(grid, region)
    w_region = grid.w_x[e_slices[0]][:, None, None] * grid.da * grid.ds

    q = q0.values.copy()
    if st.diffusion.dirichlet:
        q[0] = 0.0
        q[-1] = 0.0
    n = grid.n_steps
    trace = np.zeros((n + 1, grid.n_x, grid.n_s)) if record_trace else None
    energy = np.zeros(n + 1)
    snaps = np.zeros((n,) + st.control_box_shape()) if record_masked else None
    q0_norm = st.w_norm(q)

    for i in range(n):
        if record_trace:
            trace[i] = q[:, 0, :]
        if record_masked:
            snaps[i] = q[st.mask]
        energy[i + 1] = energy[i] + grid.dt * float(
            np.sum((q[e_slices] ** 2) * w_region))
        q = st.adjoint_step(q)
    if record_trace:
        trace[n] = q[:, 0, :]

    terminal = StateField(q, grid, time=grid.T)
    terminal.check_finite()
    return AdjointRun(terminal, trace, energy, region, q0_norm,
                      masked_snapshots=snaps,
                      config={"n_steps": n, "dt": grid.dt})


def nonlocal_source(trace_slice: np.ndarray, spec: ModelSpec, grid: Grid,
                    kernel=None) -> np.ndarray:
    """Renewal source over (x, a, s) from one time-slice of the trace.

    Probabilistic kernel: int_0^S beta(a, s, u) q(x, 0, u, t) du by midpoint
    quadrature over newborn sizes; local kernel: beta(a) q(x, 0, s, t).
    """
    kern = kernel or spec.fertility
    if kern.variant != spec.fertility.variant:
        raise KernelMismatch(
            f"kernel variant {kern.variant!r} != spec {spec.fertility.variant!r}")
    op = RenewalOperator(spec, grid)
    return op.apply_adjoint(np.asarray(trace_slice, dtype=float)) / grid.da


@dataclass(frozen=True)
class VanishingReport:
    """Outcome of the adjoint-trace vanishing check."""

    applicable: bool
    passed: Optional[bool]
    max_abs_normalized: Optional[float]
    s_lo: float
    t_lo: float
    note: str = ""

    def to_json(self):
        return {"applicable": self.applicable, "pass": self.passed,
                "max_abs": self.max_abs_normalized,
                "region": {"s": [self.s_lo, None], "t": [self.t_lo, None]},
                "note": self.note}


def vanishing_check(run: AdjointRun, crit: CriticalSizes, times: TransitTimes,
                    spec: ModelSpec, grid: Grid, tol: float = 1e-6,
                    delta_s: float = None, delta_t: float = None) -> VanishingReport:
    """Certify that the renewal trace vanishes on (alpha*, S) x (a1+S2*, T).

    The margin defaults to two grid cells on each axis: the exact-zero set's
    boundary is smeared by interpolation on non-aligned grids.
    """
    if crit.alpha_star is None:
        raise MissingCriticalSize("alpha* does not exist for this spec (a1 >= G(s2))")
    a1, a2 = spec.control.a_lo, spec.control.a_hi
    a_hat = spec.fertility.min_age
    hyp_ok = times.s2_star < min(a2 - a1, a_hat - a1) and a_hat > 0.0
    delta_s = 2.0 * grid.ds if delta_s is None else delta_s
    delta_t = 2.0 * grid.dt if delta_t is None else delta_t
    s_lo = crit.alpha_star + delta_s
    t_lo = a1 + times.s2_star + delta_t
    if not hyp_ok:
        return VanishingReport(False, None, None, s_lo, t_lo,
                               "hypothesis S2* < min{a2-a1, a_hat-a1} fails; "
                               "check skipped")
    k_sel = np.nonzero(grid.s_centers > s_lo)[0]
    t_steps = np.arange(grid.n_steps + 1)
    i_sel = np.nonzero(t_steps * grid.dt > t_lo)[0]
    if k_sel.size == 0 or i_sel.size == 0:
        return VanishingReport(False, None, None, s_lo, t_lo,
                               "certified region is empty on this grid")
    block = run.renewal_trace[np.ix_(i_sel, np.arange(grid.n_x), k_sel)]
    denom = run.q0_norm if run.q0_norm > 0 else 1.0
    max_abs = float(np.max(np.abs(block))) / denom
    return VanishingReport(True, bool(max_abs <= tol), max_abs, s_lo, t_lo)


def observed_energy(run: AdjointRun, region=None) -> np.ndarray:
    """Cumulative observation energy history recorded during the run."""
    if region is not None and region != run.energy_region:
        raise InvalidConfig(
            "run recorded energy over a different region; rerun run_adjoint "
            "with energy_region set accordingly")
    return run.observed_energy
