"""Grids, state fields, weighted inner products, and interpolation.

Layout: the spatial axis is node-based (boundary nodes included, trapezoid
weights) because the diffusion solve needs them; the age and size axes are
cell-centered with uniform midpoint weights. Midpoint weights make the
weighted transpose of the semi-Lagrangian transport a clean reverse shift,
which is what the adjoint solver and the HUM duality tests rely on.

The default desk-scale grid ties dt to the age cell so one step moves exactly
one age cell (dt = da), making age transport exact and isolating size and
diffusion errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .characteristics import _cumulative
from .errors import EmptyRegion, GridMismatch, InvalidConfig

__all__ = [
    "Grid", "StateField", "grid_for_spec",
    "inner_product", "interpolate", "restrict_to_control",
    "region_slices", "random_smooth_field",
    "write_field_csv", "write_field_bin", "read_field_bin",
]

UNIFORM = "uniform"
INVERSE_SIGMA = "inverse_sigma"


@dataclass(frozen=True)
class Grid:
    """Tensor discretization of (x, a, s) plus the time step."""

    x_nodes: np.ndarray      # n_x nodes on [0, 1], uniform, ends included
    a_centers: np.ndarray    # n_a cell centers on [0, A]
    s_centers: np.ndarray    # n_s cell centers on [0, S]
    max_age: float
    max_size: float
    dt: float
    n_steps: int
    weight_kind: str = UNIFORM
    w_x: np.ndarray = None   # quadrature weight per x node (incl. any 1/sigma)

    def __post_init__(self):
        # n_a == 1 collapses the age axis (age-independent auxiliary model)
        if (self.n_a != 1 and self.n_a < 4) or self.n_s < 4:
            raise InvalidConfig("need at least 4 age and size cells "
                                "(or exactly 1 age cell for the collapsed-age model)")
        if self.w_x is None:
            object.__setattr__(self, "w_x", _trapezoid_weights(self.x_nodes))
        if self.weight_kind == INVERSE_SIGMA:
            inner = self.w_x[1:-1]
            if not np.all(np.isfinite(inner)) or np.any(inner <= 0):
                raise InvalidConfig("1/sigma weights must be finite and positive inside")

    # -- basic geometry -----------------------------------------------------

    @property
    def n_x(self):
        return self.x_nodes.size

    @property
    def n_a(self):
        return self.a_centers.size

    @property
    def n_s(self):
        return self.s_centers.size

    @property
    def dx(self):
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def da(self):
        return float(self.max_age / self.n_a)

    @property
    def ds(self):
        return float(self.max_size / self.n_s)

    @property
    def T(self):
        return self.dt * self.n_steps

    @property
    def shape(self):
        return (self.n_x, self.n_a, self.n_s)

    def cell_weight(self):
        """Quadrature weight per node, shape (n_x, 1, 1) broadcastable."""
        return self.w_x[:, None, None] * self.da * self.ds

    def key(self):
        return (self.n_x, self.n_a, self.n_s, self.max_age, self.max_size,
                round(self.dt, 15), self.n_steps, self.weight_kind)

    def compatible(self, other: "Grid") -> bool:
        return self.key() == other.key() and np.allclose(self.w_x, other.w_x)

    def zeros(self, time=0.0) -> "StateField":
        return StateField(np.zeros(self.shape), self, time)

    def field(self, values, time=0.0) -> "StateField":
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise GridMismatch(f"values shape {values.shape} != grid shape {self.shape}")
        return StateField(values, self, time)

    @classmethod
    def make(cls, n_x, n_a, n_s, max_age, max_size, dt, n_steps,
             weight_kind=UNIFORM, inv_sigma: Optional[np.ndarray] = None):
        x = np.linspace(0.0, 1.0, n_x)
        a = (np.arange(n_a) + 0.5) * (max_age / n_a)
        s = (np.arange(n_s) + 0.5) * (max_size / n_s)
        if weight_kind == INVERSE_SIGMA:
            if inv_sigma is None:
                raise InvalidConfig("inverse-sigma grid needs 1/sigma values")
            w_x = np.zeros(n_x)
            w_x[1:-1] = (x[1] - x[0]) * inv_sigma[1:-1]
        else:
            w_x = _trapezoid_weights(x)
        return cls(x, a, s, float(max_age), float(max_size), float(dt),
                   int(n_steps), weight_kind, w_x)


def _trapezoid_weights(x):
    w = np.full(x.size, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def inverse_sigma_values(diffusion, x_nodes) -> np.ndarray:
    """1/sigma at nodes for the degenerate weight, sigma = k * Gamma.

    Gamma(x) = exp(int_x^{3/4} b/k): the exponent is chosen so that the
    divergence-form flux (k/sigma) u' makes the drift operator exactly
    self-adjoint in the weighted inner product. Boundary entries are 0
    (Dirichlet nodes are excluded from quadrature).
    """
    x = np.asarray(x_nodes, dtype=float)
    k_vals = np.maximum(np.asarray(diffusion.k(x), dtype=float), 0.0)
    if diffusion.b is None:
        gamma = np.ones_like(x)
    else:
        ratio = lambda y: np.asarray(diffusion.drift(y), dtype=float) / \
            np.maximum(np.asarray(diffusion.k(y), dtype=float), 1e-300)
        interior = x[1:-1]
        cum = _cumulative(ratio, interior)          # int from x_1 to x_i
        ref = np.interp(0.75, interior, cum)
        gamma = np.ones_like(x)
        gamma[1:-1] = np.exp(ref - cum)
    out = np.zeros_like(x)
    out[1:-1] = 1.0 / (k_vals[1:-1] * gamma[1:-1])
    return out


def grid_for_spec(spec, n, T, n_x=None, align=False, n_a=None, n_s=None) -> Grid:
    """Build the desk-scale grid for a spec.

    n: cells per structured axis (and x nodes unless n_x given). With
    align=True, dt = da and T snaps to the nearest positive multiple of dt;
    otherwise T is kept exactly and dt = T / round(T/da).
    """
    n_x = n_x or n
    n_a = n_a or n
    n_s = n_s or n
    A, S = spec.max_age, spec.max_size
    da = A / n_a
    if align:
        n_steps = max(1, int(round(T / da)))
        dt = da
    else:
        n_steps = max(1, int(round(T / da)))
        dt = T / n_steps
    if spec.diffusion.is_degenerate:
        x = np.linspace(0.0, 1.0, n_x)
        inv_sigma = inverse_sigma_values(spec.diffusion, x)
        return Grid.make(n_x, n_a, n_s, A, S, dt, n_steps,
                         weight_kind=INVERSE_SIGMA, inv_sigma=inv_sigma)
    return Grid.make(n_x, n_a, n_s, A, S, dt, n_steps)


@dataclass
class StateField:
    """A density field on a grid at one time stamp."""

    values: np.ndarray
    grid: Grid
    time: float = 0.0

    def copy(self):
        return StateField(self.values.copy(), self.grid, self.time)

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("state field contains non-finite entries")
        return self


def inner_product(f: StateField, h: StateField) -> float:
    """Weighted quadrature of f*h over the box.

    Trapezoid in x (with the grid weight, e.g. 1/sigma) and midpoint over the
    age/size cells.
    """
    if f.grid is not h.grid and not f.grid.compatible(h.grid):
        raise GridMismatch("fields live on different grids")
    return float(np.sum(f.values * h.values * f.grid.cell_weight()))


def norm(f: StateField) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


def interpolate(f: StateField, x_index: int, a: float, s: float) -> float:
    """Bilinear interpolation in (a, s) at a fixed x node.

    Zero outside the box: a < 0 (newborns are handled by the renewal
    boundary), s < 0, a > A, or s past S. Within the half-cell bands between
    the first/last cell centers and the domain edge the value tapers linearly
    to the zero extension.
    """
    g = f.grid
    if a < 0.0 or a > g.max_age or s < 0.0 or s > g.max_size:
        return 0.0
    plane = f.values[x_index]
    ja, wa0, wa1 = _cell_stencil(a, g.da, g.n_a)
    ks, ws0, ws1 = _cell_stencil(s, g.ds, g.n_s)
    out = 0.0
    for j, wa in ((ja, wa0), (ja + 1, wa1)):
        if wa == 0.0 or not 0 <= j < g.n_a:
            continue
        for k, ws in ((ks, ws0), (ks + 1, ws1)):
            if ws == 0.0 or not 0 <= k < g.n_s:
                continue
            out += wa * ws * plane[j, k]
    return float(out)


def _cell_stencil(q, delta, n):
    """Lower cell index and the two linear weights for coordinate q."""
    pos = q / delta - 0.5
    j = int(np.floor(pos))
    frac = pos - j
    return j, 1.0 - frac, frac


def region_slices(grid: Grid, region):
    """Index slices of the nodes/cells inside a control region (sharp cutoff)."""
    tol = 1e-12
    x = grid.x_nodes
    ix = np.nonzero((x >= region.x_lo - tol) & (x <= region.x_hi + tol))[0]
    a = grid.a_centers
    ia = np.nonzero((a > region.a_lo - tol) & (a < region.a_hi + tol))[0]
    s = grid.s_centers
    k = np.nonzero((s > region.s_lo - tol) & (s < region.s_hi + tol))[0]
    if ix.size == 0 or ia.size == 0 or k.size == 0:
        raise EmptyRegion("control region contains no grid node")
    return (slice(ix[0], ix[-1] + 1), slice(ia[0], ia[-1] + 1),
            slice(k[0], k[-1] + 1))


def restrict_to_control(f: StateField, region) -> StateField:
    """f times the sharp node indicator of the control region."""
    sx, sa, ss = region_slices(f.grid, region)
    out = np.zeros_like(f.values)
    out[sx, sa, ss] = f.values[sx, sa, ss]
    return StateField(out, f.grid, f.time)


def random_smooth_field(grid: Grid, rng, n_modes: int = 4,
                        dirichlet_x: bool = False, normalize: bool = True) -> StateField:
    """Random smooth Fourier-bump field, reproducible from the rng."""
    x = grid.x_nodes
    a = grid.a_centers / grid.max_age
    s = grid.s_centers / grid.max_size
    vals = np.zeros(grid.shape)
    for _ in range(n_modes):
        kx, ka, ks = rng.integers(0, 3), rng.integers(0, 3), rng.integers(0, 3)
        amp = rng.normal() / (1.0 + kx + ka + ks)
        if dirichlet_x:
            fx = np.sin(np.pi * (kx + 1) * x)
        else:
            fx = np.cos(np.pi * kx * x)
        fa = np.cos(np.pi * (ka * a + rng.uniform()))
        fs = np.cos(np.pi * (ks * s + rng.uniform()))
        vals += amp * fx[:, None, None] * fa[None, :, None] * fs[None, None, :]
    out = StateField(vals, grid)
    if normalize:
        nrm = norm(out)
        if nrm > 0:
            out.values /= nrm
    return out


# ---------------------------------------------------------------------------
# snapshots


def write_field_csv(f: StateField, path):
    g = f.grid
    xx, aa, ss = np.meshgrid(g.x_nodes, g.a_centers, g.s_centers, indexing="ij")
    arr = np.column_stack([xx.ravel(), aa.ravel(), ss.ravel(), f.values.ravel()])
    np.savetxt(path, arr, delimiter=",", header="x,a,s,value", comments="")


def write_field_bin(f: StateField, path):
    """Header: three little-endian int64 dims, then row-major float64 values."""
    with open(path, "wb") as fh:
        np.asarray(f.values.shape, dtype="<i8").tofile(fh)
        np.ascontiguousarray(f.values, dtype="<f8").tofile(fh)


def read_field_bin(path, grid: Grid = None):
    with open(path, "rb") as fh:
        dims = np.fromfile(fh, dtype="<i8", count=3)
        values = np.fromfile(fh, dtype="<f8").reshape(tuple(dims))
    if grid is not None:
        return grid.field(values)
    return values
