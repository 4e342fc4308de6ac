"""Problem specification: vital rates, growth, fertility, diffusion, control.

A ModelSpec fully describes one problem instance for either variant
(probabilistic birth with nondegenerate Neumann diffusion, or local birth with
degenerate Dirichlet diffusion). Specs are immutable after construction and
safe to share across experiment workers. The derived scalar quantities
(transit times, critical sizes, minimal controllability times) live here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rates
from .characteristics import CharacteristicsTable
from .errors import InvalidConfig, NonFiniteSample
from .rates import Rate, as_rate

__all__ = [
    "GrowthModel", "MortalityModel", "FertilityKernel", "DiffusionSpec",
    "ControlRegion", "ModelSpec", "TransitTimes", "CriticalSizes",
    "ValidationReport", "Check",
    "validate", "transit_times", "critical_sizes", "minimal_time",
    "spec_from_json", "spec_to_json", "load_spec",
]

PROBABILISTIC = "probabilistic"
LOCAL = "local"
LOCAL_AGE_SIZE = "local_age_size"

NEUMANN = "nondegenerate_neumann"
DEGENERATE = "degenerate_dirichlet"


@dataclass(frozen=True)
class GrowthModel:
    """Size growth law g(s) >= 0 on [0, S]."""

    rate: Rate
    max_size: float
    horizon_cap: Optional[float] = None  # travel-time cap for the stalled-at-S variant

    @property
    def rate_fn(self) -> Callable:
        return self.rate

    def to_json(self):
        doc = {"rate": self.rate.to_json(), "max_size": self.max_size}
        if self.horizon_cap is not None:
            doc["horizon_cap"] = self.horizon_cap
        return doc


@dataclass(frozen=True)
class MortalityModel:
    """Separable mortality mu(a, s) = mu1(a) + mu2(s).

    The demographic tails (int mu = +inf at A resp. S) cannot be represented
    numerically; rates are evaluated with the argument clamped at
    integrable_cutoff * (A resp. S), and validation reports the tail condition
    as "truncated". The solver enforces extinction at a = A through its
    outflow boundary instead.
    """

    age_rate: Rate
    size_rate: Rate
    max_age: float
    integrable_cutoff: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.integrable_cutoff < 1.0:
            raise InvalidConfig("integrable_cutoff must be in (0, 1)")

    def mu1(self, a):
        a = np.minimum(np.asarray(a, dtype=float), self.integrable_cutoff * self.max_age)
        return self.age_rate(a)

    def mu2_for(self, max_size):
        cutoff = self.integrable_cutoff * max_size
        rate = self.size_rate
        return lambda s: rate(np.minimum(np.asarray(s, dtype=float), cutoff))

    def to_json(self):
        return {
            "age_rate": self.age_rate.to_json(),
            "size_rate": self.size_rate.to_json(),
            "max_age": self.max_age,
            "integrable_cutoff": self.integrable_cutoff,
        }


@dataclass(frozen=True)
class FertilityKernel:
    """Birth kernel, one of three variants.

    probabilistic  beta(a, s_parent, s_newborn) =
                   age_profile(a) * parent_profile(s_parent) * newborn_profile(s_newborn)
    local          beta(a) = age_profile(a); newborns inherit the parent size
    local_age_size beta(a, s) = age_profile(a) * size_profile(s)

    min_age is the minimal fertility age: profiles are expected to vanish
    below it (checked by validate, not enforced here).
    """

    variant: str
    min_age: float
    age_profile: Rate
    parent_profile: Optional[Rate] = None
    newborn_profile: Optional[Rate] = None
    size_profile: Optional[Rate] = None

    def __post_init__(self):
        if self.variant not in (PROBABILISTIC, LOCAL, LOCAL_AGE_SIZE):
            raise InvalidConfig(f"unknown fertility variant {self.variant!r}")
        if self.variant == PROBABILISTIC and self.newborn_profile is None:
            raise InvalidConfig("probabilistic kernel needs a newborn_profile")

    @property
    def is_probabilistic(self):
        return self.variant == PROBABILISTIC

    def beta3(self, a, s_parent, s_newborn):
        """Probabilistic kernel value beta(a, s_parent, s_newborn)."""
        if self.variant != PROBABILISTIC:
            raise InvalidConfig("beta3 only defined for the probabilistic variant")
        out = np.asarray(self.age_profile(a), dtype=float)
        if self.parent_profile is not None:
            out = out * self.parent_profile(s_parent)
        out = out * self.newborn_profile(s_newborn)
        return out

    def beta_age(self, a):
        return self.age_profile(a)

    def beta2(self, a, s):
        """Local age-size kernel value beta(a, s)."""
        out = np.asarray(self.age_profile(a), dtype=float)
        if self.variant == LOCAL_AGE_SIZE and self.size_profile is not None:
            out = out * self.size_profile(s)
        return out

    def to_json(self):
        doc = {"variant": self.variant, "min_age": self.min_age,
               "age_profile": self.age_profile.to_json()}
        for name in ("parent_profile", "newborn_profile", "size_profile"):
            r = getattr(self, name)
            if r is not None:
                doc[name] = r.to_json()
        return doc


@dataclass(frozen=True)
class DiffusionSpec:
    """Spatial operator on (0, 1).

    nondegenerate_neumann: div(sigma_c grad y) with zero-flux ends.
    degenerate_dirichlet:  k(x) y_xx + b(x) y_x with zero ends; k may vanish
    at one or both endpoints with degeneracy exponents m1, m2 in (0, 2).
    """

    variant: str
    conductivity: Optional[Rate] = None      # nondegenerate
    k: Optional[Rate] = None                 # degenerate
    b: Optional[Rate] = None
    m1: float = 1.0
    m2: float = 1.0

    def __post_init__(self):
        if self.variant == NEUMANN:
            if self.conductivity is None:
                raise InvalidConfig("nondegenerate diffusion needs a conductivity")
        elif self.variant == DEGENERATE:
            if self.k is None:
                raise InvalidConfig("degenerate diffusion needs k")
            if not (0.0 < self.m1 < 2.0 and 0.0 < self.m2 < 2.0):
                raise InvalidConfig("degeneracy exponents must lie in (0, 2)")
        else:
            raise InvalidConfig(f"unknown diffusion variant {self.variant!r}")

    @property
    def is_degenerate(self):
        return self.variant == DEGENERATE

    def drift(self, x):
        if self.b is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.b(x)

    def to_json(self):
        doc = {"variant": self.variant}
        if self.variant == NEUMANN:
            doc["conductivity"] = self.conductivity.to_json()
        else:
            doc["k"] = self.k.to_json()
            if self.b is not None:
                doc["b"] = self.b.to_json()
            doc["m1"], doc["m2"] = self.m1, self.m2
        return doc


@dataclass(frozen=True)
class ControlRegion:
    """Support omega x (a1, a2) x (s1, s2) of the localized control."""

    x_lo: float
    x_hi: float
    a_lo: float
    a_hi: float
    s_lo: float
    s_hi: float

    def __post_init__(self):
        if not (0.0 < self.x_lo < self.x_hi < 1.0):
            raise InvalidConfig("omega must lie strictly inside the spatial domain")
        if not (0.0 <= self.a_lo < self.a_hi):
            raise InvalidConfig("age window must satisfy 0 <= a1 < a2")
        if not (0.0 <= self.s_lo < self.s_hi):
            raise InvalidConfig("size window must satisfy 0 <= s1 < s2")

    def to_json(self):
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "a_lo": self.a_lo,
                "a_hi": self.a_hi, "s_lo": self.s_lo, "s_hi": self.s_hi}


@dataclass(frozen=True)
class ModelSpec:
    growth: GrowthModel
    mortality: MortalityModel
    fertility: FertilityKernel
    diffusion: DiffusionSpec
    control: ControlRegion

    def __post_init__(self):
        if self.control.a_hi > self.mortality.max_age + 1e-12:
            raise InvalidConfig("control age window exceeds max age")
        if self.control.s_hi > self.growth.max_size + 1e-12:
            raise InvalidConfig("control size window exceeds max size")

    @property
    def max_age(self):
        return self.mortality.max_age

    @property
    def max_size(self):
        return self.growth.max_size

    def table(self, n_nodes=4096) -> CharacteristicsTable:
        return CharacteristicsTable.from_spec(self, n_nodes=n_nodes)

    def to_json(self):
        return {
            "growth": self.growth.to_json(),
            "mortality": self.mortality.to_json(),
            "fertility": self.fertility.to_json(),
            "diffusion": self.diffusion.to_json(),
            "control": self.control.to_json(),
        }


@dataclass(frozen=True)
class TransitTimes:
    """Growth transit times and the derived max-combinations."""

    s1_star: float   # travel time 0 -> s1
    s2_star: float   # travel time s2 -> S
    t0: float        # max{S1*, S2*}
    t1: float        # max{a1 + S2*, S1*}

    def to_json(self):
        return {"S1_star": self.s1_star, "S2_star": self.s2_star,
                "T0": self.t0, "T1": self.t1}


@dataclass(frozen=True)
class CriticalSizes:
    """Sizes where the growth curve lags the control window by exactly a1.

    alpha_star solves G(s2) - G(alpha*) = a1 (absent when a1 >= G(s2));
    beta_star solves G(s1) - G(beta*) = a1 (absent when a1 >= G(s1)).
    """

    alpha_star: Optional[float]
    beta_star: Optional[float]

    def to_json(self):
        return {"alpha_star": self.alpha_star, "beta_star": self.beta_star}


@dataclass(frozen=True)
class Check:
    name: str
    passed: Optional[bool]   # None: informational (e.g. truncated tails)
    witness: dict = field(default_factory=dict)
    note: str = ""

    def to_json(self):
        return {"name": self.name, "passed": self.passed,
                "witness": self.witness, "note": self.note}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    hypothesis: dict   # theorem-hypothesis booleans, advisory only

    @property
    def structural_ok(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def to_json(self):
        return {"checks": [c.to_json() for c in self.checks],
                "hypothesis": self.hypothesis,
                "structural_ok": self.structural_ok}


# ---------------------------------------------------------------------------
# operations


def _samples(lo, hi, n=257, interior=True):
    pts = np.linspace(lo, hi, n)
    return pts[1:-1] if interior else pts


def _finite_or_raise(name, values):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        idx = int(np.argmax(~np.isfinite(values)))
        raise NonFiniteSample(f"{name} returned a non-finite value at sample index {idx}")
    return values


def validate(spec: ModelSpec, n_samples: int = 257) -> ValidationReport:
    """Check the demographic hypotheses on sampled nodes; never mutates spec.

    Structural checks fail the report; the non-integrable-tail conditions are
    reported as informational ("truncated"), and the theorem hypotheses are
    returned as an advisory boolean vector (experiments deliberately violate
    them).
    """
    checks = []
    A, S = spec.max_age, spec.max_size

    a_pts = _samples(0.0, A, n_samples)
    s_pts = _samples(0.0, S, n_samples)

    mu1 = _finite_or_raise("mu1", spec.mortality.mu1(a_pts))
    ok = bool(np.all(mu1 >= 0))
    checks.append(Check("H1_mu1_nonnegative", ok,
                        {} if ok else {"age": float(a_pts[np.argmin(mu1)]),
                                       "value": float(mu1.min())}))
    a_star = spec.mortality.integrable_cutoff * A
    local_int = float(np.trapz(spec.mortality.mu1(_samples(0.0, a_star, n_samples, False)),
                               _samples(0.0, a_star, n_samples, False)))
    checks.append(Check("H1_mu1_locally_integrable", bool(np.isfinite(local_int)),
                        {"a_star": a_star, "integral": local_int}))
    checks.append(Check("H1_mu1_tail_divergence", None, {},
                        "truncated: not satisfied (rates clamped at cutoff)"))

    mu2_fn = spec.mortality.mu2_for(S)
    mu2 = _finite_or_raise("mu2", mu2_fn(s_pts))
    ok = bool(np.all(mu2 >= 0))
    checks.append(Check("H2_mu2_nonnegative", ok,
                        {} if ok else {"size": float(s_pts[np.argmin(mu2)]),
                                       "value": float(mu2.min())}))
    s_star = spec.mortality.integrable_cutoff * S  # bound read as S, not A
    grid = _samples(0.0, s_star, n_samples, False)
    local_int = float(np.trapz(mu2_fn(grid), grid))
    checks.append(Check("H2_mu2_locally_integrable", bool(np.isfinite(local_int)),
                        {"s_star": s_star, "integral": local_int}))
    checks.append(Check("H2_mu2_tail_divergence", None, {},
                        "truncated: not satisfied (rates clamped at cutoff)"))

    g = _finite_or_raise("g", spec.growth.rate(_samples(0.0, S, n_samples, False)))
    bad = np.nonzero(g < 0)[0]
    checks.append(Check("H3_growth_nonnegative", bad.size == 0,
                        {} if bad.size == 0 else {"index": int(bad[0]),
                                                  "value": float(g[bad[0]])}))
    if isinstance(spec.growth.rate, rates.Table):
        ys = spec.growth.rate.y
        bad = np.nonzero(ys < 0)[0]
        checks.append(Check("H3_table_samples_nonnegative", bad.size == 0,
                            {} if bad.size == 0 else {"index": int(bad[0]),
                                                      "value": float(ys[bad[0]])}))
    if spec.growth.horizon_cap is None:
        try:
            table = spec.table(n_nodes=512)
            gmax = table.G_max
            checks.append(Check("H3_growth_time_finite", bool(np.isfinite(gmax)),
                                {"G_S": gmax}))
        except Exception as exc:
            table = None
            checks.append(Check("H3_growth_time_finite", False, {"error": str(exc)}))
    else:
        table = spec.table(n_nodes=512)
        checks.append(Check("H3_growth_time_finite", None,
                            {"cap": spec.growth.horizon_cap},
                            "stalled-growth variant: G capped at configured horizon"))

    fert = spec.fertility
    if fert.is_probabilistic:
        aa, pp, nn = np.meshgrid(a_pts[::16], s_pts[::16], s_pts[::16], indexing="ij")
        beta = _finite_or_raise("beta", fert.beta3(aa, pp, nn))
        checks.append(Check("H4_beta_nonnegative", bool(np.all(beta >= 0)), {}))
        below = a_pts[a_pts < fert.min_age - 1e-12]
        if below.size:
            bb, pp, nn = np.meshgrid(below[::4], s_pts[::16], s_pts[::16], indexing="ij")
            vanish = bool(np.all(fert.beta3(bb, pp, nn) == 0))
        else:
            vanish = True
        checks.append(Check("H5_beta_vanishes_below_min_age", vanish,
                            {"min_age": fert.min_age}))
    else:
        aa, ss = np.meshgrid(a_pts, s_pts[::16], indexing="ij")
        beta = _finite_or_raise("beta", fert.beta2(aa, ss))
        checks.append(Check("H6_beta_nonnegative", bool(np.all(beta >= 0)), {}))
        below = a_pts[a_pts < fert.min_age - 1e-12]
        vanish = bool(np.all(fert.beta_age(below) == 0)) if below.size else True
        checks.append(Check("H7_beta_vanishes_below_min_age", vanish,
                            {"min_age": fert.min_age}))

    diff = spec.diffusion
    x_pts = _samples(0.0, 1.0, n_samples)
    if diff.is_degenerate:
        k = _finite_or_raise("k", diff.k(x_pts))
        kp = _finite_or_raise("k'", diff.k.derivative(x_pts))
        checks.append(Check("A2_k_positive_inside", bool(np.all(k > 0)), {}))
        k0 = float(diff.k(np.array([0.0]))[0])
        k1 = float(diff.k(np.array([1.0]))[0])
        checks.append(Check("A2_k_vanishes_at_endpoint",
                            math.isclose(k0, 0.0, abs_tol=1e-12)
                            or math.isclose(k1, 0.0, abs_tol=1e-12),
                            {"k0": k0, "k1": k1}))
        lhs1 = x_pts * kp - diff.m1 * k
        lhs2 = (x_pts - 1.0) * kp - diff.m2 * k
        checks.append(Check("A2_degeneracy_exponent_m1", bool(np.all(lhs1 <= 1e-10)),
                            {"max_violation": float(lhs1.max())}))
        checks.append(Check("A2_degeneracy_exponent_m2", bool(np.all(lhs2 <= 1e-10)),
                            {"max_violation": float(lhs2.max())}))
        drift_over_k = np.abs(diff.drift(x_pts)) / np.maximum(k, 1e-300)
        b_int = float(np.trapz(drift_over_k, x_pts))
        checks.append(Check("A2_drift_over_k_integrable", bool(np.isfinite(b_int)),
                            {"integral_estimate": b_int}))
    else:
        sig = _finite_or_raise("conductivity", diff.conductivity(x_pts))
        cmin = float(sig.min())
        checks.append(Check("ellipticity_constant_positive", cmin > 0.0,
                            {"min_conductivity": cmin}))

    # advisory theorem hypotheses
    hypothesis = {}
    if table is not None:
        times = transit_times(spec, table=table)
        reg = spec.control
        a_hat = fert.min_age
        hypothesis = {
            "a1_below_min_fertility_age": bool(reg.a_lo < a_hat),
            "S2_star_bound": bool(times.s2_star
                                  < min(reg.a_hi - reg.a_lo, a_hat - reg.a_lo)),
            "S1_star_bound": bool(times.s1_star < min(reg.a_hi, a_hat)),
            "growth_reaches_fertility": bool(table.G_max > a_hat),
        }

    return ValidationReport(tuple(checks), hypothesis)


def transit_times(spec: ModelSpec, table: CharacteristicsTable = None) -> TransitTimes:
    """S1* = G(s1), S2* = G(S) - G(s2), and the max-combinations T0, T1."""
    table = table or spec.table()
    s1, s2 = spec.control.s_lo, spec.control.s_hi
    a1 = spec.control.a_lo
    s1_star = table.growth_time(s1)
    s2_star = table.G_max - table.growth_time(s2)
    return TransitTimes(
        s1_star=s1_star,
        s2_star=s2_star,
        t0=max(s1_star, s2_star),
        t1=max(a1 + s2_star, s1_star),
    )


def critical_sizes(spec: ModelSpec, table: CharacteristicsTable = None) -> CriticalSizes:
    """Solve G(s2) - G(alpha*) = a1 and G(s1) - G(beta*) = a1 by inversion."""
    table = table or spec.table()
    a1 = spec.control.a_lo
    out = {}
    for name, s_ref in (("alpha_star", spec.control.s_hi),
                        ("beta_star", spec.control.s_lo)):
        target = table.growth_time(s_ref) - a1
        out[name] = table.inverse_growth(target) if target > 0.0 else None
    return CriticalSizes(**out)


def minimal_time(spec: ModelSpec, kernel_kind: str, table=None) -> float:
    """Controllability-time threshold for the given birth-kernel kind.

    probabilistic: A - a2 + T1 + T0; local: A - a2 + a1 + S1* + S2*.
    """
    times = transit_times(spec, table=table)
    A, a1, a2 = spec.max_age, spec.control.a_lo, spec.control.a_hi
    if kernel_kind == PROBABILISTIC:
        return A - a2 + times.t1 + times.t0
    if kernel_kind in (LOCAL, LOCAL_AGE_SIZE):
        return A - a2 + a1 + times.s1_star + times.s2_star
    raise InvalidConfig(f"unknown kernel kind {kernel_kind!r}")


# ---------------------------------------------------------------------------
# JSON ingest / emit


def spec_from_json(doc: dict) -> ModelSpec:
    try:
        growth = GrowthModel(
            rate=as_rate(doc["growth"]["rate"]),
            max_size=float(doc["growth"]["max_size"]),
            horizon_cap=doc["growth"].get("horizon_cap"),
        )
        mort = doc["mortality"]
        mortality = MortalityModel(
            age_rate=as_rate(mort["age_rate"]),
            size_rate=as_rate(mort["size_rate"]),
            max_age=float(mort["max_age"]),
            integrable_cutoff=float(mort.get("integrable_cutoff", 0.95)),
        )
        fert = doc["fertility"]
        fertility = FertilityKernel(
            variant=fert["variant"],
            min_age=float(fert.get("min_age", 0.0)),
            age_profile=as_rate(fert["age_profile"]),
            parent_profile=as_rate(fert["parent_profile"]) if "parent_profile" in fert else None,
            newborn_profile=as_rate(fert["newborn_profile"]) if "newborn_profile" in fert else None,
            size_profile=as_rate(fert["size_profile"]) if "size_profile" in fert else None,
        )
        diff = doc["diffusion"]
        diffusion = DiffusionSpec(
            variant=diff["variant"],
            conductivity=as_rate(diff["conductivity"]) if "conductivity" in diff else None,
            k=as_rate(diff["k"]) if "k" in diff else None,
            b=as_rate(diff["b"]) if "b" in diff else None,
            m1=float(diff.get("m1", 1.0)),
            m2=float(diff.get("m2", 1.0)),
        )
        control = ControlRegion(**{k: float(v) for k, v in doc["control"].items()})
    except KeyError as exc:
        raise InvalidConfig(f"spec document missing key {exc}") from exc
    return ModelSpec(growth, mortality, fertility, diffusion, control)


def spec_to_json(spec: ModelSpec) -> dict:
    return spec.to_json()


def load_spec(path) -> ModelSpec:
    with open(path) as fh:
        return spec_from_json(json.load(fh))
