"""Closed-form rate tokens and sampled-table rates.

Model configs are plain JSON; every scalar rate function (growth, mortality,
fertility factors, diffusion coefficients) is either a closed-form token or a
sampled table with monotone-cubic interpolation, so configs stay reproducible
without a scripting dependency.

Token kinds:
    constant        {"kind": "constant", "value": c}
    affine          {"kind": "affine", "intercept": c0, "slope": c1}
    power           {"kind": "power", "coefficient": c, "exponent": p}   c*x^p
    poly            {"kind": "poly", "coeffs": [c0, c1, ...]}            sum ci x^i
    bump            {"kind": "bump", "lo": a, "hi": b, "amplitude": A}
                    A*sin^2(pi (x-a)/(b-a)) on [a,b], 0 outside (C^1)
    step            {"kind": "step", "threshold": t, "value": v}         v*1_{x>=t}
    reciprocal_gap  {"kind": "reciprocal_gap", "scale": c, "limit": L}   c/(L-x)
    table           {"kind": "table", "x": [...], "y": [...]}            pchip
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InvalidConfig

__all__ = ["Rate", "rate_from_json", "rate_to_json", "as_rate"]


class Rate:
    """A scalar function of one variable, vectorized over numpy arrays."""

    kind = "abstract"

    def __call__(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{self.__class__.__name__}({self.to_json()})"


class Constant(Rate):
    kind = "constant"

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def to_json(self):
        return {"kind": self.kind, "value": self.value}


class Affine(Rate):
    kind = "affine"

    def __init__(self, intercept: float, slope: float):
        self.intercept = float(intercept)
        self.slope = float(slope)

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)

    def derivative(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.slope)

    def to_json(self):
        return {"kind": self.kind, "intercept": self.intercept, "slope": self.slope}


class Power(Rate):
    kind = "power"

    def __init__(self, coefficient: float, exponent: float):
        self.coefficient = float(coefficient)
        self.exponent = float(exponent)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.coefficient * np.power(np.maximum(x, 0.0), self.exponent)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.exponent
        return self.coefficient * p * np.power(np.maximum(x, 1e-300), p - 1.0)

    def to_json(self):
        return {"kind": self.kind, "coefficient": self.coefficient, "exponent": self.exponent}


class Poly(Rate):
    kind = "poly"

    def __init__(self, coeffs):
        self.coeffs = [float(c) for c in coeffs]

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)

    def derivative(self, x):
        der = np.polynomial.polynomial.polyder(self.coeffs)
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), der)

    def to_json(self):
        return {"kind": self.kind, "coeffs": self.coeffs}


class Bump(Rate):
    """Smooth sin^2 bump supported on [lo, hi]."""

    kind = "bump"

    def __init__(self, lo: float, hi: float, amplitude: float = 1.0):
        if not hi > lo:
            raise InvalidConfig(f"bump needs hi > lo, got [{lo}, {hi}]")
        self.lo, self.hi, self.amplitude = float(lo), float(hi), float(amplitude)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        t = (x - self.lo) / (self.hi - self.lo)
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, self.amplitude * np.sin(np.pi * t) ** 2, 0.0)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        w = self.hi - self.lo
        t = (x - self.lo) / w
        inside = (t > 0.0) & (t < 1.0)
        return np.where(
            inside,
            self.amplitude * np.pi / w * np.sin(2.0 * np.pi * t),
            0.0,
        )

    def to_json(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi, "amplitude": self.amplitude}


class Step(Rate):
    kind = "step"

    def __init__(self, threshold: float, value: float = 1.0):
        self.threshold = float(threshold)
        self.value = float(value)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= self.threshold, self.value, 0.0)

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def to_json(self):
        return {"kind": self.kind, "threshold": self.threshold, "value": self.value}


class ReciprocalGap(Rate):
    """Demographic tail c/(L - x); callers truncate it to stay integrable."""

    kind = "reciprocal_gap"

    def __init__(self, scale: float, limit: float):
        self.scale = float(scale)
        self.limit = float(limit)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        gap = np.maximum(self.limit - x, 1e-300)
        return self.scale / gap

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        gap = np.maximum(self.limit - x, 1e-300)
        return self.scale / gap**2

    def to_json(self):
        return {"kind": self.kind, "scale": self.scale, "limit": self.limit}


class Table(Rate):
    """Monotone-cubic (PCHIP) interpolant of sampled (x, y) pairs."""

    kind = "table"

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise InvalidConfig("table rate needs matching 1-D x, y with >= 2 samples")
        if np.any(np.diff(x) <= 0):
            raise InvalidConfig("table rate abscissae must be strictly increasing")
        self.x, self.y = x, y
        self._interp = PchipInterpolator(x, y, extrapolate=False)
        self._der = self._interp.derivative()

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        q = np.clip(q, self.x[0], self.x[-1])
        return self._interp(q)

    def derivative(self, q):
        q = np.asarray(q, dtype=float)
        q = np.clip(q, self.x[0], self.x[-1])
        return self._der(q)

    def to_json(self):
        return {"kind": self.kind, "x": self.x.tolist(), "y": self.y.tolist()}


_KINDS = {
    cls.kind: cls
    for cls in (Constant, Affine, Power, Poly, Bump, Step, ReciprocalGap, Table)
}


def rate_from_json(doc: dict) -> Rate:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise InvalidConfig(f"rate token must be an object with 'kind', got {doc!r}")
    kind = doc["kind"]
    if kind not in _KINDS:
        raise InvalidConfig(f"unknown rate kind {kind!r}")
    kwargs = {k: v for k, v in doc.items() if k != "kind"}
    return _KINDS[kind](**kwargs)


def rate_to_json(rate: Rate) -> dict:
    return rate.to_json()


def as_rate(obj) -> Rate:
    """Coerce a Rate, JSON token, or bare number into a Rate."""
    if isinstance(obj, Rate):
        return obj
    if isinstance(obj, (int, float)):
        return Constant(obj)
    if isinstance(obj, dict):
        return rate_from_json(obj)
    raise InvalidConfig(f"cannot interpret {obj!r} as a rate")
