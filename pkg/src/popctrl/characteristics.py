"""Growth-time map, survival factors, and characteristic-line geometry.

The growth-time map G(s) = int_0^s du/g(u) is tabulated once on a refined node
set and inverted by monotone bracketing; both sit in every solver inner loop.
Survival log-integrals for the age and size mortality rates are tabulated on
the same pattern. All operations are pure; a built table is immutable and safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import InversionFailure, OutOfRange, QuadratureFailure

__all__ = [
    "CharacteristicsTable",
    "Region",
    "growth_time",
    "inverse_growth",
    "survival_ratio",
    "classify",
    "backward_foot",
]

# 8-point Gauss-Legendre on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _gl8(f, lo, hi):
    """Vectorized 8-point Gauss-Legendre over panels [lo_i, hi_i]."""
    width = hi - lo
    pts = lo[:, None] + width[:, None] * _GL_X[None, :]
    vals = np.asarray(f(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise QuadratureFailure("integrand not finite inside a quadrature panel")
    return width * (vals @ _GL_W)


def _panel_integrals(f, lo, hi):
    """Panel integrals with an embedded error estimate.

    Each panel is integrated by GL-8 and by GL-8 on its two halves; panels
    where the two disagree (endpoint singularities, kinks) are flagged stiff
    and get handed to adaptive quadrature by the caller.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (lo + hi)
    coarse = _gl8(f, lo, hi)
    fine = _gl8(f, lo, mid) + _gl8(f, mid, hi)
    err = np.abs(coarse - fine)
    scale = np.maximum(np.abs(fine), 1e-300)
    stiff = err > 1e-12 + 1e-10 * scale
    return fine, stiff


def _quad_panel(f, lo, hi):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # kinks inside a panel are expected
        val, err = quad(f, lo, hi, limit=200)
    if not np.isfinite(val):
        raise QuadratureFailure(f"quadrature diverged on [{lo:g}, {hi:g}]")
    if err > 1e-7 * max(1.0, abs(val)):
        raise QuadratureFailure(f"quadrature error {err:g} on [{lo:g}, {hi:g}]")
    return val


def _cumulative(f, nodes):
    """Cumulative int_{nodes[0]}^{nodes[i]} f, adaptive on stiff panels."""
    nodes = np.asarray(nodes, dtype=float)
    increments, stiff = _panel_integrals(f, nodes[:-1], nodes[1:])
    for i in np.nonzero(stiff)[0]:
        increments[i] = _quad_panel(f, nodes[i], nodes[i + 1])
    out = np.empty(nodes.size)
    out[0] = 0.0
    np.cumsum(increments, out=out[1:])
    return out


def _partial(f, lo, hi):
    """Integral of f over the partial panel [lo, hi] (hi >= lo)."""
    if hi <= lo:
        return 0.0
    vals, stiff = _panel_integrals(f, np.array([lo]), np.array([hi]))
    if stiff[0]:
        return _quad_panel(f, lo, hi)
    return float(vals[0])


@dataclass(frozen=True)
class Region:
    """Domain-decomposition tag for one (a, s, t) triple.

    A1: the backward characteristic reaches t=0 before any boundary;
    A1p: it exits through a=A first; A2p: through s=S first.
    `tie` marks points where two exit times coincide within tolerance
    (resolved deterministically toward A2p / the later branch).
    """

    tag: str
    tie: bool = False


class CharacteristicsTable:
    """Tabulated G, G^-1 and survival log-integrals for one model.

    Parameters
    ----------
    g : callable
        Growth rate s -> g(s) >= 0 on [0, S].
    max_size : float
        S.
    mu1, max_age : callable, float
        Age mortality on [0, A) (already truncated by the caller) and A.
    mu2 : callable
        Size mortality on [0, S) (already truncated).
    n_nodes : int
        Refinement of the tabulation (panel count; default 4096).
    horizon_cap : float or None
        When int_0^S ds/g diverges (growth stalls at S), G is capped at this
        travel-time horizon and sizes beyond G^-1(cap) never reach S.
    """

    def __init__(self, g, max_size, mu1=None, max_age=None, mu2=None,
                 n_nodes=4096, horizon_cap=None, tolerance=1e-12):
        self.g = g
        self.S = float(max_size)
        self.A = float(max_age) if max_age is not None else None
        self.mu1 = mu1
        self.mu2 = mu2
        self.tolerance = float(tolerance)
        self.horizon_cap = horizon_cap

        nodes = np.linspace(0.0, self.S, n_nodes + 1)
        inv_g = lambda s: 1.0 / np.maximum(np.asarray(g(s), dtype=float), 1e-300)
        if horizon_cap is None:
            G = _cumulative(inv_g, nodes)
            if not np.all(np.isfinite(G)):
                raise QuadratureFailure(
                    "int 1/g diverges; set horizon_cap for the stalled-growth variant"
                )
        else:
            # cap: accumulate until the horizon, clamp the tail
            G = _cumulative_capped(inv_g, nodes, float(horizon_cap))
        if np.any(np.diff(G) <= 0):
            raise QuadratureFailure("G(s) is not strictly increasing; g must be > 0 a.e.")
        self.s_nodes = nodes
        self.G_values = G
        self._inv_g = inv_g

        if mu1 is not None:
            if max_age is None:
                raise OutOfRange("mu1 given without max_age")
            self.a_nodes = np.linspace(0.0, self.A, n_nodes + 1)
            m1 = lambda a: np.asarray(mu1(a), dtype=float)
            self.logpi1 = -_cumulative(m1, self.a_nodes)
            self._m1 = m1
        else:
            self.a_nodes = None
            self.logpi1 = None
            self._m1 = None
        if mu2 is not None:
            m2 = lambda s: np.asarray(mu2(s), dtype=float)
            self.logpi2 = -_cumulative(m2, nodes)
            self._m2 = m2
        else:
            self.logpi2 = None
            self._m2 = None

    @classmethod
    def from_spec(cls, spec, n_nodes=4096):
        return cls(
            spec.growth.rate_fn,
            spec.growth.max_size,
            mu1=spec.mortality.mu1,
            max_age=spec.mortality.max_age,
            mu2=spec.mortality.mu2_for(spec.growth.max_size),
            n_nodes=n_nodes,
            horizon_cap=spec.growth.horizon_cap,
        )

    # -- growth-time map -------------------------------------------------

    @property
    def G_max(self) -> float:
        return float(self.G_values[-1])

    def growth_time(self, s: float) -> float:
        """G(s) by composite quadrature, exact to the panel rule between nodes."""
        if s < -self.tolerance or s > self.S + self.tolerance:
            raise OutOfRange(f"size {s} outside [0, {self.S}]")
        s = min(max(s, 0.0), self.S)
        i = int(np.searchsorted(self.s_nodes, s, side="right") - 1)
        i = min(max(i, 0), self.s_nodes.size - 2)
        base = self.G_values[i] + _partial(self._inv_g, self.s_nodes[i], s)
        if self.horizon_cap is not None:
            base = min(base, float(self.horizon_cap))
        return float(base)

    def inverse_growth(self, tau: float) -> float:
        """s with |G(s) - tau| <= tolerance, by bracketing on the monotone table."""
        if tau < -self.tolerance or tau > self.G_max + self.tolerance:
            raise OutOfRange(f"travel time {tau} outside [0, {self.G_max}]")
        tau = min(max(tau, 0.0), self.G_max)
        if tau <= 0.0:
            return 0.0
        if tau >= self.G_max:
            return self.S
        i = int(np.searchsorted(self.G_values, tau, side="right") - 1)
        i = min(max(i, 0), self.G_values.size - 2)
        lo, hi = self.s_nodes[i], self.s_nodes[i + 1]
        f = lambda s: self.growth_time(s) - tau
        flo, fhi = f(lo), f(hi)
        if flo > 0 or fhi < 0:
            raise InversionFailure(
                f"bracketing failed for tau={tau} despite monotone table"
            )
        if flo == 0.0:
            return float(lo)
        if fhi == 0.0:
            return float(hi)
        try:
            root = brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16)
        except ValueError as exc:  # pragma: no cover - guarded above
            raise InversionFailure(str(exc)) from exc
        return float(root)

    # -- survival ---------------------------------------------------------

    def log_survival_age(self, a: float) -> float:
        """log pi_1(a) = -int_0^a mu1."""
        if self._m1 is None:
            return 0.0
        if a < -self.tolerance or a > self.A + self.tolerance:
            raise OutOfRange(f"age {a} outside [0, {self.A}]")
        a = min(max(a, 0.0), self.A)
        i = int(np.searchsorted(self.a_nodes, a, side="right") - 1)
        i = min(max(i, 0), self.a_nodes.size - 2)
        return float(self.logpi1[i] - _partial(self._m1, self.a_nodes[i], a))

    def log_survival_size(self, s: float) -> float:
        """log pi_2(s) = -int_0^s mu2 (size parameterized along the growth curve)."""
        if self._m2 is None:
            return 0.0
        if s < -self.tolerance or s > self.S + self.tolerance:
            raise OutOfRange(f"size {s} outside [0, {self.S}]")
        s = min(max(s, 0.0), self.S)
        i = int(np.searchsorted(self.s_nodes, s, side="right") - 1)
        i = min(max(i, 0), self.s_nodes.size - 2)
        return float(self.logpi2[i] - _partial(self._m2, self.s_nodes[i], s))

    def survival_ratio(self, a: float, s: float, t: float) -> float:
        """Survival factor over the characteristic segment ending at (a, s).

        pi_1(a)/pi_1(a-t) * pi_2(s)/pi_2(s_prev) where s_prev is the size t
        time units earlier on the growth curve. The caller supplies the base
        point: a - t and G(s) - t must be >= 0.
        """
        if t < -self.tolerance:
            raise OutOfRange(f"elapsed time {t} < 0")
        t = max(t, 0.0)
        a_prev = a - t
        if a_prev < -self.tolerance:
            raise OutOfRange(f"characteristic base age {a_prev} < 0")
        tau_prev = self.growth_time(s) - t
        if tau_prev < -self.tolerance:
            raise OutOfRange("characteristic base size below 0")
        s_prev = self.inverse_growth(max(tau_prev, 0.0))
        log_fac = self.log_survival_age(a) - self.log_survival_age(max(a_prev, 0.0))
        log_fac += self.log_survival_size(s) - self.log_survival_size(s_prev)
        return float(np.exp(log_fac))

    # -- characteristic geometry ------------------------------------------

    def classify(self, a: float, s: float, t: float, max_age=None, tie_tol=None) -> Region:
        """Region of (a, s, t): argmax of {t-A+a, t-G(S)+G(s), 0}.

        A1 when the backward characteristic reaches t=0 inside the box,
        A1p when it exits through a=A first, A2p through s=S first.
        Ties (within tie_tol) resolve toward A2p, then A1p, and are flagged.
        """
        A = self.A if max_age is None else float(max_age)
        if A is None:
            raise OutOfRange("classify needs a maximal age")
        tol = self.tolerance if tie_tol is None else float(tie_tol)
        d_age = t - (A - a)                                  # > 0: exited via a=A
        d_size = t - (self.G_max - self.growth_time(s))      # > 0: exited via s=S
        best = max(0.0, d_age, d_size)
        tie = sum(1 for v in (0.0, d_age, d_size) if best - v <= tol) > 1
        # deterministic tie priority: size exit, then age exit, then interior
        if d_size >= best - tol:
            return Region("A2p", tie)
        if d_age >= best - tol:
            return Region("A1p", tie)
        return Region("A1", tie)

    def backward_foot(self, a: float, s: float, t: float, lam: float, max_age=None):
        """Point on the characteristic through (a, s, t) at parameter lam.

        Returns (a + t - lam, G^-1(G(s) + t - lam)). lam must lie in
        [lower_limit, t] with lower_limit = max{0, t-A+a, t-(G(S)-G(s))}.
        """
        A = self.A if max_age is None else float(max_age)
        if A is None:
            raise OutOfRange("backward_foot needs a maximal age")
        dtau = t - lam
        if dtau < -self.tolerance:
            raise OutOfRange(f"parameter {lam} beyond current time {t}")
        age = a + dtau
        tau = self.growth_time(s) + dtau
        if age > A + self.tolerance:
            raise OutOfRange(f"foot age {age} exceeds max age {A}")
        if tau > self.G_max + self.tolerance:
            raise OutOfRange(f"foot travel time {tau} exceeds G(S)={self.G_max}")
        return float(min(age, A)), self.inverse_growth(min(max(tau, 0.0), self.G_max))

    def lower_limit(self, a: float, s: float, t: float, max_age=None) -> float:
        """max{0, t-A+a, t-(G(S)-G(s))}: earliest parameter on the characteristic."""
        A = self.A if max_age is None else float(max_age)
        return max(0.0, t - (A - a), t - (self.G_max - self.growth_time(s)))

    # -- export -----------------------------------------------------------

    def dump_csv(self, path):
        """Write (s, G(s)) pairs for external plotting."""
        arr = np.column_stack([self.s_nodes, self.G_values])
        np.savetxt(path, arr, delimiter=",", header="s,G", comments="")


def _cumulative_capped(f, nodes, cap):
    """Cumulative integral clamped at a travel-time cap (divergent tails)."""
    import warnings

    nodes = np.asarray(nodes, dtype=float)
    increments = np.empty(nodes.size - 1)
    for i in range(nodes.size - 1):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # divergence expected near S
                val, _ = quad(f, nodes[i], nodes[i + 1], limit=100)
        except Exception:
            val = np.inf
        increments[i] = val if np.isfinite(val) else cap
    out = np.empty(nodes.size)
    out[0] = 0.0
    np.cumsum(increments, out=out[1:])
    # keep strict monotonicity below the cap, then clamp
    return np.minimum(out, cap + np.arange(nodes.size) * 1e-15)


# -- functional wrappers (table-first argument order used in the docs) -----

def growth_time(table: CharacteristicsTable, s: float) -> float:
    return table.growth_time(s)


def inverse_growth(table: CharacteristicsTable, tau: float) -> float:
    return table.inverse_growth(tau)


def survival_ratio(table: CharacteristicsTable, a: float, s: float, t: float) -> float:
    return table.survival_ratio(a, s, t)


def classify(a, s, t, max_age, table: CharacteristicsTable, tie_tol=None) -> Region:
    return table.classify(a, s, t, max_age=max_age, tie_tol=tie_tol)


def backward_foot(a, s, t, lam, table: CharacteristicsTable, max_age=None):
    return table.backward_foot(a, s, t, lam, max_age=max_age)
