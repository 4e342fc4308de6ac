"""Forward solver: renewal boundary, exact semi-Lagrangian transport in
(age, size) with survival factors, and implicit (Crank-Nicolson) diffusion
in x, composed by operator splitting.

Every sub-step is a linear map with an exactly known weighted transpose; the
adjoint solver applies those transposes in reverse order, which is what makes
the HUM Gramian symmetric to machine precision.

Splitting order per step (renewal reads the pre-step field, matching the
boundary-condition semantics): renewal -> transport (mortality folded into
the characteristic survival factors) -> diffusion -> add dt * m * u.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .characteristics import CharacteristicsTable, _cumulative as _cumulative_from
from .errors import (GridMismatch, InvalidConfig, KernelMismatch,
                     SingularSystem)
from .grids import Grid, StateField, region_slices
from .model import LOCAL_AGE_SIZE, PROBABILISTIC, ModelSpec

__all__ = [
    "SplitStepper", "ForwardRun",
    "renewal", "transport_step", "diffusion_step", "step", "run",
]

_TINY = 1e-13


# ---------------------------------------------------------------------------
# diffusion


class DiffusionOperator:
    """Crank-Nicolson step for the 1-D spatial operator, one solve per
    (age, size) column.

    The generator A is assembled so that diag(w_x) @ A is exactly symmetric
    in floating point; the weighted adjoint of the step is then
    multiply-after-solve instead of solve-after-multiply.
    """

    def __init__(self, spec: ModelSpec, grid: Grid, dt: float):
        n = grid.n_x
        dx = grid.dx
        x = grid.x_nodes
        self.dirichlet = spec.diffusion.is_degenerate
        half = 0.5 * (x[:-1] + x[1:])
        if self.dirichlet:
            flux = _degenerate_flux(spec.diffusion, half)
        else:
            flux = np.asarray(spec.diffusion.conductivity(half), dtype=float)

        # symmetric flux matrix S (tridiagonal), then A = diag(1/w) S
        w = grid.w_x
        lower = np.zeros(n)
        diag = np.zeros(n)
        upper = np.zeros(n)
        rows = range(1, n - 1) if self.dirichlet else range(n)
        for i in rows:
            cl = flux[i - 1] / dx if i > 0 else 0.0
            cu = flux[i] / dx if i < n - 1 else 0.0
            if self.dirichlet:
                # Dirichlet: flux into the frozen boundary nodes stays in S
                # (neighbors are zero, so only the diagonal drain matters)
                diag[i] = -(cl + cu)
                lower[i] = cl if i > 1 else 0.0
                upper[i] = cu if i < n - 2 else 0.0
            else:
                diag[i] = -(cl + cu)
                lower[i] = cl
                upper[i] = cu
        w_safe = np.where(w > 0, w, 1.0)
        self.A_lower = np.where(w > 0, lower / w_safe, 0.0)
        self.A_diag = np.where(w > 0, diag / w_safe, 0.0)
        self.A_upper = np.where(w > 0, upper / w_safe, 0.0)
        self.dt = dt
        c = 0.5 * dt
        # banded storage of M2 = I - c A for solve_banded
        self._ab = np.zeros((3, n))
        self._ab[0, 1:] = -c * self.A_upper[:-1]
        self._ab[1, :] = 1.0 - c * self.A_diag
        self._ab[2, :-1] = -c * self.A_lower[1:]
        self._c = c
        if self.dirichlet:
            # boundary rows are identity (values pinned at zero)
            self._ab[1, 0] = 1.0
            self._ab[1, -1] = 1.0
            self._ab[0, 1] = 0.0
            self._ab[2, -2] = 0.0

    def _mul_M1(self, y):
        """(I + c A) y along axis 0 of a (n_x, m) array."""
        c = self._c
        out = y + c * self.A_diag[:, None] * y
        out[1:] += c * self.A_lower[1:, None] * y[:-1]
        out[:-1] += c * self.A_upper[:-1, None] * y[1:]
        if self.dirichlet:
            out[0] = 0.0
            out[-1] = 0.0
        return out

    def _solve_M2(self, z):
        try:
            return solve_banded((1, 1), self._ab, z)
        except Exception as exc:
            raise SingularSystem(f"tridiagonal solve failed: {exc}") from exc

    def apply(self, y2d):
        """Forward CN step: solve (I - cA) out = (I + cA) y."""
        if self.dirichlet:
            y2d = y2d.copy()
            y2d[0] = 0.0
            y2d[-1] = 0.0
        return self._solve_M2(self._mul_M1(y2d))

    def apply_adjoint(self, q2d):
        """Weighted transpose of apply: multiply (I + cA) after solving."""
        if self.dirichlet:
            q2d = q2d.copy()
            q2d[0] = 0.0
            q2d[-1] = 0.0
        return self._mul_M1(self._solve_M2(q2d))


def _degenerate_flux(diffusion, half):
    """Flux coefficient k/sigma = 1/Gamma at half nodes.

    Gamma(x) = exp(int_x^{3/4} b/k); for b = 0 the flux is identically 1 and
    the generator reduces to k(x) d2/dx2 through the 1/sigma row weights.
    """
    if diffusion.b is None:
        return np.ones(half.size)
    ratio = lambda y: np.asarray(diffusion.drift(y), dtype=float) / \
        np.maximum(np.asarray(diffusion.k(y), dtype=float), 1e-300)
    cum = _cumulative_from(ratio, half)          # int from half[0] to half[i]
    ref = np.interp(0.75, half, cum)
    return np.exp(cum - ref)                     # 1/Gamma = exp(-(ref - cum))


# ---------------------------------------------------------------------------
# transport


class TransportOperator:
    """Semi-Lagrangian transport over one dt, factored as
    scale * (Aw contract age) * (Sw contract size) plus newborn inflow rows.

    Aw/Sw hold the zero-ghost bilinear gather weights; `scale` carries the
    survival factors and the conservative-form Jacobian g(s_prev)/g(s).
    Newborn inflow (cells with a < dt) reads the pre-step renewal density at
    the size where the characteristic crossed a = 0.
    """

    def __init__(self, spec: ModelSpec, grid: Grid, table: CharacteristicsTable,
                 dt: float):
        n_a, n_s = grid.n_a, grid.n_s
        a = grid.a_centers
        s = grid.s_centers
        g_fn = spec.growth.rate
        self.dt = dt
        self.grid = grid
        mu2 = spec.mortality.mu2_for(spec.max_size)

        Sw = np.zeros((n_s, n_s))
        scale_s = np.zeros(n_s)
        frozen_size = bool(np.all(np.asarray(g_fn(s), dtype=float) <= _TINY))
        if frozen_size:
            # growth switched off: sizes are inert labels, mortality decays
            # in place (e.g. the pure-diffusion oracle configuration)
            np.fill_diagonal(Sw, 1.0)
            scale_s[:] = np.exp(-np.asarray(mu2(s), dtype=float) * dt)
            tau = np.full(n_s, np.inf)
        else:
            tau = np.array([table.growth_time(sk) for sk in s])
            lp2 = np.array([table.log_survival_size(sk) for sk in s])
            g_here = np.maximum(np.asarray(g_fn(s), dtype=float), _TINY)
            # size gather: foot s_prev = G^-1(G(s) - dt)
            for k in range(n_s):
                if tau[k] < dt - _TINY:
                    continue  # crossed s = 0: boundary value 0
                s_prev = table.inverse_growth(max(tau[k] - dt, 0.0))
                scale_s[k] = np.exp(lp2[k] - table.log_survival_size(s_prev)) \
                    * max(float(g_fn(np.array([s_prev]))[0]), _TINY) / g_here[k]
                for idx, wgt in _stencil(s_prev, grid.ds, n_s):
                    Sw[k, idx] = wgt

        # age gather: foot a - dt on the uniform grid
        Aw = np.zeros((n_a, n_a))
        scale_a = np.zeros(n_a)
        inflow = []
        if n_a == 1:
            # collapsed age axis: age-independent model (size-only transport)
            Aw[0, 0] = 1.0
            scale_a[0] = np.exp(-float(spec.mortality.mu1(a[:1])[0]) * dt)
        else:
            lp1 = np.array([table.log_survival_age(aj) for aj in a])
            for j in range(n_a):
                if a[j] < dt - _TINY:
                    inflow.append(j)
                    continue
                scale_a[j] = np.exp(lp1[j] - table.log_survival_age(a[j] - dt))
                for idx, wgt in _stencil(a[j] - dt, grid.da, n_a):
                    Aw[j, idx] = wgt

        self.Aw = Aw
        self.Sw = Sw
        self.scale = scale_a[:, None] * scale_s[None, :]

        # inflow rows: characteristic crossed a = 0 at size s_cross
        self.inflow_rows = np.array(inflow, dtype=int)
        if inflow:
            Nw = np.zeros((len(inflow), n_s, n_s))
            for i, j in enumerate(inflow):
                for k in range(n_s):
                    if frozen_size:
                        Nw[i, k, k] = np.exp(table.log_survival_age(a[j])
                                             - float(mu2(s[k : k + 1])[0]) * a[j])
                        continue
                    if tau[k] < a[j] - _TINY:
                        continue  # entered through s = 0 instead
                    s_cross = table.inverse_growth(max(tau[k] - a[j], 0.0))
                    surv = np.exp(table.log_survival_age(a[j])
                                  + lp2[k] - table.log_survival_size(s_cross))
                    jac = max(float(g_fn(np.array([s_cross]))[0]), _TINY) / g_here[k]
                    for idx, wgt in _stencil(s_cross, grid.ds, n_s):
                        Nw[i, k, idx] = surv * jac * wgt
            self.Nw = Nw
        else:
            self.Nw = np.zeros((0, n_s, n_s))

    def apply(self, y, newborn=None):
        """One transport step; y is (n_x, n_a, n_s), newborn is (n_x, n_s)."""
        z = np.einsum("ij,xjs->xis", self.Aw, y)
        z = z @ self.Sw.T
        z *= self.scale[None, :, :]
        if self.inflow_rows.size and newborn is not None:
            z[:, self.inflow_rows, :] += np.einsum("iks,xs->xik", self.Nw, newborn)
        return z

    def apply_adjoint(self, q):
        """Weighted transpose of the pure-transport part (no inflow)."""
        z = q * self.scale[None, :, :]
        z = np.einsum("ij,xis->xjs", self.Aw, z)
        return z @ self.Sw

    def inflow_adjoint(self, q):
        """Transpose of the inflow map: field -> newborn-density weights."""
        if not self.inflow_rows.size:
            return np.zeros((q.shape[0], self.grid.n_s))
        qi = q[:, self.inflow_rows, :]
        return np.einsum("iks,xik->xs", self.Nw, qi)


def _stencil(q, delta, n):
    """Zero-ghost linear gather stencil over cell centers for coordinate q."""
    pos = q / delta - 0.5
    j = int(np.floor(pos))
    frac = pos - j
    out = []
    if 0 <= j < n and 1.0 - frac > _TINY:
        out.append((j, 1.0 - frac))
    if 0 <= j + 1 < n and frac > _TINY:
        out.append((j + 1, frac))
    return out


# ---------------------------------------------------------------------------
# renewal


class RenewalOperator:
    """Birth quadrature: population field -> newborn density on (x, s)."""

    def __init__(self, spec: ModelSpec, grid: Grid):
        fert = spec.fertility
        a, s = grid.a_centers, grid.s_centers
        self.variant = fert.variant
        if fert.variant == PROBABILISTIC:
            fa = np.asarray(fert.age_profile(a), dtype=float)
            fp = (np.asarray(fert.parent_profile(s), dtype=float)
                  if fert.parent_profile is not None else np.ones_like(s))
            fn = np.asarray(fert.newborn_profile(s), dtype=float)
            # K[j, l, k] = da * ds * beta(a_j, s_l, s_k)
            self.K3 = grid.da * grid.ds * np.einsum("j,l,k->jlk", fa, fp, fn)
            self.K2 = None
        else:
            fa = np.asarray(fert.age_profile(a), dtype=float)
            if fert.variant == LOCAL_AGE_SIZE and fert.size_profile is not None:
                fs = np.asarray(fert.size_profile(s), dtype=float)
                self.K2 = grid.da * np.einsum("j,k->jk", fa, fs)
            else:
                self.K2 = grid.da * np.repeat(fa[:, None], grid.n_s, axis=1)
            self.K3 = None

    def apply(self, y):
        if self.K3 is not None:
            return np.tensordot(y, self.K3, axes=([1, 2], [0, 1]))
        return np.einsum("jk,xjk->xk", self.K2, y)

    def apply_adjoint(self, c):
        """Transpose: newborn-density weights -> field over (x, a, s)."""
        if self.K3 is not None:
            return np.tensordot(c, self.K3, axes=([1], [2]))
        return self.K2[None, :, :] * c[:, None, :]


def _table_for(spec: ModelSpec, grid: Grid, n_nodes: int) -> CharacteristicsTable:
    """Characteristics table for the stepper; with growth switched off the
    growth-time map is never queried, so a unit surrogate keeps the survival
    integrals available."""
    g_vals = np.asarray(spec.growth.rate(grid.s_centers), dtype=float)
    if np.all(g_vals <= _TINY):
        return CharacteristicsTable(
            lambda s: np.ones_like(np.asarray(s, dtype=float)),
            spec.growth.max_size,
            mu1=spec.mortality.mu1, max_age=spec.mortality.max_age,
            mu2=spec.mortality.mu2_for(spec.growth.max_size),
            n_nodes=min(n_nodes, 512))
    return spec.table(n_nodes=n_nodes)


# ---------------------------------------------------------------------------
# the split stepper


class SplitStepper:
    """All sub-step operators for one (spec, grid) pair.

    One run owns its workspace; the operators themselves are immutable and
    shared freely.
    """

    def __init__(self, spec: ModelSpec, grid: Grid, table: CharacteristicsTable = None,
                 table_nodes: int = 2048):
        self.spec = spec
        self.grid = grid
        self.table = table or _table_for(spec, grid, table_nodes)
        self.transport = TransportOperator(spec, grid, self.table, grid.dt)
        self.diffusion = DiffusionOperator(spec, grid, grid.dt)
        self.renewal = RenewalOperator(spec, grid)
        self.mask = region_slices(grid, spec.control)

    # weighted inner product on raw arrays
    def w_inner(self, f, h):
        return float(np.sum(f * h * self.grid.cell_weight()))

    def w_norm(self, f):
        return float(np.sqrt(max(self.w_inner(f, f), 0.0)))

    def _diffuse(self, y, adjoint=False):
        flat = y.reshape(self.grid.n_x, -1)
        out = self.diffusion.apply_adjoint(flat) if adjoint else self.diffusion.apply(flat)
        return out.reshape(self.grid.shape)

    def step(self, y: np.ndarray, u: Optional[np.ndarray] = None) -> np.ndarray:
        """One forward step; u (if given) lives on the control box."""
        b = self.renewal.apply(y)
        z = self.transport.apply(y, newborn=b)
        z = self._diffuse(z)
        if u is not None:
            z[self.mask] += self.grid.dt * u
        return z

    def adjoint_step(self, q: np.ndarray) -> np.ndarray:
        """Exact weighted transpose of `step` with u = None."""
        v = self._diffuse(q, adjoint=True)
        out = self.transport.apply_adjoint(v)
        trace_w = self.transport.inflow_adjoint(v)
        if trace_w.any():
            out += self.renewal.apply_adjoint(trace_w)
        return out

    def masked(self, y: np.ndarray) -> np.ndarray:
        return y[self.mask]

    def control_box_shape(self):
        sx, sa, ss = self.mask
        return (sx.stop - sx.start, sa.stop - sa.start, ss.stop - ss.start)


# ---------------------------------------------------------------------------
# runs


@dataclass
class ForwardRun:
    """Artifacts of one forward solve."""

    terminal: StateField
    trace_newborn: np.ndarray    # (n_steps + 1, n_x, n_s)
    mass_history: np.ndarray     # (n_steps + 1,)
    config: dict = field(default_factory=dict)


def _control_slice(control, k, t, stepper):
    if control is None:
        return None
    if callable(control):
        u_full = control(k, t)
        return u_full[stepper.mask]
    arr = np.asarray(control, dtype=float)
    if arr.ndim == 4 and arr.shape[0] >= stepper.grid.n_steps:
        if arr.shape[1:] == stepper.grid.shape:
            return arr[k][stepper.mask]
        if arr.shape[1:] == stepper.control_box_shape():
            return arr[k]
    raise InvalidConfig("control must be (n_steps, grid shape) or (n_steps, control box)")


def run(spec: ModelSpec, grid: Grid, y0: StateField, control=None,
        stepper: SplitStepper = None, record_trace: bool = True) -> ForwardRun:
    """Advance the controlled population model to T = grid.dt * grid.n_steps."""
    st = stepper or SplitStepper(spec, grid)
    if y0.grid is not grid and not y0.grid.compatible(grid):
        raise GridMismatch("initial state lives on a different grid")
    y = y0.values.copy()
    if st.diffusion.dirichlet:
        y[0] = 0.0
        y[-1] = 0.0
    n = grid.n_steps
    trace = np.zeros((n + 1, grid.n_x, grid.n_s)) if record_trace else None
    mass = np.zeros(n + 1)
    ones = np.ones(grid.shape)
    mass[0] = st.w_inner(y, ones)
    for k in range(n):
        if record_trace:
            trace[k] = st.renewal.apply(y)
        u = _control_slice(control, k, k * grid.dt, st)
        y = st.step(y, u)
        mass[k + 1] = st.w_inner(y, ones)
    if record_trace:
        trace[n] = st.renewal.apply(y)
    terminal = StateField(y, grid, time=grid.T)
    terminal.check_finite()
    return ForwardRun(terminal, trace, mass, config={"n_steps": n, "dt": grid.dt})


# ---------------------------------------------------------------------------
# functional wrappers for the single sub-steps


def renewal(f: StateField, kernel=None, spec: ModelSpec = None) -> np.ndarray:
    """Newborn density on (x, s) from the field via the birth quadrature."""
    if spec is None:
        raise InvalidConfig("renewal needs the model spec")
    if kernel is not None and kernel.variant != spec.fertility.variant:
        raise KernelMismatch(
            f"kernel variant {kernel.variant!r} != spec {spec.fertility.variant!r}")
    op = RenewalOperator(spec, f.grid)
    return op.apply(f.values)


def transport_step(f: StateField, table: CharacteristicsTable, dt: float,
                   spec: ModelSpec = None, newborn=None) -> StateField:
    if spec is None:
        raise InvalidConfig("transport_step needs the model spec")
    if abs(dt - f.grid.dt) > 1e-12:
        raise InvalidConfig("dt must equal the grid dt")
    op = TransportOperator(spec, f.grid, table, dt)
    return StateField(op.apply(f.values, newborn=newborn), f.grid, f.time + dt)


def diffusion_step(f: StateField, spec: ModelSpec, dt: float) -> StateField:
    op = DiffusionOperator(spec, f.grid, dt)
    flat = f.values.reshape(f.grid.n_x, -1)
    return StateField(op.apply(flat).reshape(f.grid.shape), f.grid, f.time + dt)


def step(f: StateField, u, t, spec: ModelSpec, stepper: SplitStepper = None) -> StateField:
    st = stepper or SplitStepper(spec, f.grid)
    u_box = _control_slice(u, 0, t, st) if u is not None else None
    return StateField(st.step(f.values, u_box), f.grid, f.time + f.grid.dt)
