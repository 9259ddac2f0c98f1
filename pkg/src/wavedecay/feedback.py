"""Parametric damping laws g and the concave auxiliary function h0.

A damping law is described by two growth classes: one governing g on
|s| <= 1 (the "origin" branch, where damping may degenerate) and one on
|s| > 1 (the "infinity" branch, where it may be sub- or superlinear).
The branches are glued continuously at |s| = 1 by rescaling the
infinity-branch coefficient.

The second half of the module constructs the concave increasing function
h0 with h0(g(s)s) >= s^2 + g(s)^2 on |s| <= 1.  For a linear or
sublinear-power origin there are closed forms; for superlinear and
exponentially flat origins h0 is built numerically as a safety-scaled
inverse of x -> sqrt(x)*g(sqrt(x)) and extended affinely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np


class ConstructionFailed(Exception):
    """Automatic h0 construction could not certify its defining inequality."""


class OutOfRange(Exception):
    """Requested value lies outside the function's range or domain."""


class NoConvergence(Exception):
    """Iterative solve exhausted its iteration cap without meeting tolerance."""


# ---------------------------------------------------------------------------
# damping-law specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OriginLinear:
    """g(s) = c0*s on |s| <= 1 with slope c0 = (m0 + M0)/2, m0 <= c0 <= M0."""
    m0: float = 1.0
    M0: float = 1.0


@dataclass(frozen=True)
class OriginPower:
    """g(s) = c0*sign(s)|s|^exponent on |s| <= 1, c0 = (m0 + M0)/2."""
    exponent: float = 3.0
    m0: float = 1.0
    M0: float = 1.0


@dataclass(frozen=True)
class OriginExpCubic:
    """g(s) = s^3 * exp(-1/s^2): all derivatives vanish at 0."""


@dataclass(frozen=True)
class OriginExpAbs:
    """g(s) = s|s| * exp(-1/|s|): exponentially flat at 0."""


@dataclass(frozen=True)
class InfinityLinear:
    """g(s) ~ c*s for |s| > 1 with declared slope bounds m <= c <= M."""
    m: float = 1.0
    M: float = 1.0


@dataclass(frozen=True)
class InfinityPower:
    """g(s) ~ c*sign(s)|s|^r for |s| > 1 with declared bounds m, M."""
    r: float = 1.0
    m: float = 1.0
    M: float = 1.0


OriginBranch = Union[OriginLinear, OriginPower, OriginExpCubic, OriginExpAbs]
InfinityBranch = Union[InfinityLinear, InfinityPower]


@dataclass(frozen=True)
class FeedbackSpec:
    """Two-branch damping law; continuous, odd, monotone increasing.

    The infinity-branch coefficient is normalized so the branches agree at
    |s| = 1; the declared bounds (m, M) are rescaled by the same factor, so
    the sampled bound check  m*s^(r+1) <= g(s)s <= M*s^(r+1)  uses the
    values returned by :meth:`infinity_bounds`.
    """

    origin: OriginBranch
    infinity: InfinityBranch

    def __post_init__(self):
        o, i = self.origin, self.infinity
        if isinstance(o, (OriginLinear, OriginPower)):
            if not (0.0 < o.m0 <= o.M0):
                raise ValueError("origin bounds require 0 < m0 <= M0")
        if isinstance(o, OriginPower) and o.exponent <= 0.0:
            raise ValueError("origin power exponent must be positive")
        if not (0.0 < i.m <= i.M):
            raise ValueError("infinity bounds require 0 < m <= M")
        if isinstance(i, InfinityPower) and i.r <= 0.0:
            raise ValueError("infinity order r must be positive")

    # -- derived coefficients ----------------------------------------------

    def origin_coeff(self) -> float:
        """Representative coefficient of the origin branch (g(1) for powers)."""
        o = self.origin
        if isinstance(o, (OriginLinear, OriginPower)):
            return 0.5 * (o.m0 + o.M0)
        return math.exp(-1.0)   # both exponential models hit e^-1 at s = 1

    def value_at_one(self) -> float:
        return self.origin_coeff()

    def infinity_coeff(self) -> float:
        """Coefficient of the infinity branch after continuity matching."""
        return self.value_at_one()

    def infinity_bounds(self) -> tuple[float, float]:
        """Declared (m, M) rescaled by the continuity normalization."""
        i = self.infinity
        raw = 0.5 * (i.m + i.M)
        scale = self.infinity_coeff() / raw
        return i.m * scale, i.M * scale

    def is_linear(self) -> bool:
        """True when g is globally linear (both branches linear)."""
        return isinstance(self.origin, OriginLinear) and isinstance(
            self.infinity, InfinityLinear)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _origin_values(spec: FeedbackSpec, s: np.ndarray) -> np.ndarray:
    o = spec.origin
    if isinstance(o, OriginLinear):
        return spec.origin_coeff() * s
    if isinstance(o, OriginPower):
        return spec.origin_coeff() * np.sign(s) * np.abs(s) ** o.exponent
    a = np.abs(s)
    with np.errstate(divide="ignore"):
        if isinstance(o, OriginExpCubic):
            return s ** 3 * np.where(a > 0.0, np.exp(-1.0 / np.where(a > 0.0, s * s, 1.0)), 0.0)
        # OriginExpAbs
        return s * a * np.where(a > 0.0, np.exp(-1.0 / np.where(a > 0.0, a, 1.0)), 0.0)


def _infinity_values(spec: FeedbackSpec, s: np.ndarray) -> np.ndarray:
    r = order_at_infinity(spec)
    return spec.infinity_coeff() * np.sign(s) * np.abs(s) ** r


def eval_g(spec: FeedbackSpec, s):
    """Evaluate g(s).  Accepts scalars or arrays; odd by construction."""
    arr = np.asarray(s, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    inner = np.abs(arr) <= 1.0
    if inner.any():
        out[inner] = _origin_values(spec, arr[inner])
    if not inner.all():
        out[~inner] = _infinity_values(spec, arr[~inner])
    return float(out[0]) if scalar else out


def order_at_infinity(spec: FeedbackSpec) -> float:
    """Growth order r at infinity: g(s)s ~ |s|^(r+1) for |s| >= 1."""
    i = spec.infinity
    return float(i.r) if isinstance(i, InfinityPower) else 1.0


# ---------------------------------------------------------------------------
# monotone scalar functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonotoneFn:
    """Evaluable increasing function on [0, x_max] with fn(0) = 0.

    ``fn`` must be numpy-vectorized.  ``inverse``, when present, is the
    exact inverse map (used by fast paths; the generic route is
    :func:`invert_monotone`).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    x_max: float = math.inf
    concave: bool = False
    inverse: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(arr), dtype=float)
        return float(out) if arr.ndim == 0 else out


def identity_fn() -> MonotoneFn:
    return MonotoneFn(lambda x: x, math.inf, True, inverse=lambda y: y)


def linear_fn(slope: float) -> MonotoneFn:
    if slope <= 0.0:
        raise ValueError("slope must be positive")
    return MonotoneFn(lambda x: slope * x, math.inf, True,
                      inverse=lambda y: y / slope)


def power_fn(coeff: float, exponent: float) -> MonotoneFn:
    """c * x^a on [0, inf); concave iff a <= 1."""
    if coeff <= 0.0 or exponent <= 0.0:
        raise ValueError("coefficient and exponent must be positive")
    return MonotoneFn(
        lambda x: coeff * np.asarray(x, float) ** exponent,
        math.inf,
        exponent <= 1.0,
        inverse=lambda y: (np.asarray(y, float) / coeff) ** (1.0 / exponent),
    )


def interp_fn(xs: np.ndarray, ys: np.ndarray, concave: bool = False,
              extend: bool = False) -> MonotoneFn:
    """Piecewise-linear interpolant through (xs, ys), xs[0] = ys[0] = 0.

    With ``extend`` the last segment's slope continues affinely beyond
    xs[-1], which preserves concavity of concave samples.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if xs[0] != 0.0 or ys[0] != 0.0:
        raise ValueError("interpolant must pass through the origin")
    if not (np.all(np.diff(xs) > 0.0) and np.all(np.diff(ys) > 0.0)):
        raise ValueError("samples must be strictly increasing")
    if extend:
        tail = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])

        def fn(x):
            x = np.asarray(x, float)
            base = np.interp(x, xs, ys)
            return np.where(x > xs[-1], ys[-1] + tail * (x - xs[-1]), base)

        def inv(y):
            y = np.asarray(y, float)
            base = np.interp(y, ys, xs)
            return np.where(y > ys[-1], xs[-1] + (y - ys[-1]) / tail, base)

        return MonotoneFn(fn, math.inf, concave, inverse=inv)
    return MonotoneFn(lambda x: np.interp(x, xs, ys), float(xs[-1]), concave,
                      inverse=lambda y: np.interp(y, ys, xs))


def invert_monotone(f: MonotoneFn, y: float, tol: float = 1e-10) -> float:
    """Solve f(x) = y by bracketed bisection; |f(x) - y| <= tol on success.

    Monotone in y.  Raises OutOfRange when y < 0 or y exceeds f(x_max),
    NoConvergence when the iteration cap (200) is hit first.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if y < 0.0:
        raise OutOfRange(f"target {y} below range of a nonnegative map")
    if y == 0.0:
        return 0.0
    lo = 0.0
    if math.isfinite(f.x_max):
        hi = f.x_max
        if y > float(f(hi)) + tol:
            raise OutOfRange(f"target {y} exceeds f(x_max) = {float(f(hi))}")
    else:
        hi = 1.0
        grow = 0
        while float(f(hi)) < y:
            hi *= 2.0
            grow += 1
            if grow > 400:
                raise OutOfRange("target unreachable: f appears bounded below y")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = float(f(mid))
        if abs(fm - y) <= tol:
            return mid
        if fm < y:
            lo = mid
        else:
            hi = mid
    raise NoConvergence(f"bisection cap hit inverting at y = {y} (tol {tol})")


# ---------------------------------------------------------------------------
# h0 construction and verification
# ---------------------------------------------------------------------------

def build_h0(spec: FeedbackSpec, delta: float = 1.0,
             safety: float = 2.0) -> MonotoneFn:
    """Concave increasing h0 with h0(g(s)s) >= s^2 + g(s)^2 on |s| <= 1.

    Linear origin: h0(x) = (M0 + 1/m0) x.
    Power origin, exponent < 1: h0(x) = c x^(2t/(1+t)),
        c = 2(M0^2+1)/m0^(2t/(1+t)) for exponent t.
    Power origin with exponent > 1, and both exponential models: h0 is the
    numeric inverse of x -> sqrt(x) g(sqrt(x)) on [0, delta], multiplied by
    an adaptive safety factor (starting at ``safety``, doubled until a
    dense sample grid certifies the inequality) and extended affinely.
    """
    o = spec.origin
    if isinstance(o, OriginLinear):
        return linear_fn(o.M0 + 1.0 / o.m0)
    if isinstance(o, OriginPower) and o.exponent <= 1.0:
        if o.exponent == 1.0:
            return linear_fn(o.M0 + 1.0 / o.m0)
        t = o.exponent
        e = 2.0 * t / (1.0 + t)
        c = 2.0 * (o.M0 ** 2 + 1.0) / o.m0 ** e
        return power_fn(c, e)

    # numeric route: invert phi(x) = sqrt(x) g(sqrt(x)) on [0, delta]
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    xs = np.concatenate([[0.0], np.geomspace(1e-10 * delta, delta, 4001)])
    roots = np.sqrt(xs)
    ys = roots * eval_g(spec, roots)
    # exponentially flat laws underflow to exact 0 near the origin; keep
    # the strictly increasing representable part (plus the origin itself)
    keep = np.concatenate([[True], (ys[1:] > 0.0) & (np.diff(ys) > 0.0)])
    xs, ys = xs[keep], ys[keep]
    if len(ys) < 3 or not np.all(np.diff(ys) > 0.0):
        raise ConstructionFailed(
            "sqrt(x) g(sqrt(x)) not strictly increasing on sample grid")

    tiny = np.nextafter(0.0, 1.0)
    if ys[1] > tiny:
        # extend the table down to the smallest positive double, so every
        # representable argument lands in a segment whose inverse is nearly
        # flat (the chord from 0 would undershoot it by orders of magnitude)
        lo, hi = 0.0, xs[1]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if math.sqrt(mid) * float(eval_g(spec, math.sqrt(mid))) < tiny:
                lo = mid
            else:
                hi = mid
        y_left = math.sqrt(hi) * float(eval_g(spec, math.sqrt(hi)))
        if 0.0 < y_left < ys[1] and 0.0 < hi < xs[1]:
            xs = np.concatenate([[0.0, hi], xs[1:]])
            ys = np.concatenate([[0.0, y_left], ys[1:]])

    s = np.linspace(-1.0, 1.0, 10001)
    gs = eval_g(spec, s)
    args = gs * s
    # arguments that underflow to exact zero carry no float information;
    # there the inequality is attested by the construction, not the grid
    live = args > 0.0
    need = s[live] ** 2 + gs[live] ** 2
    base = np.interp(args[live], ys, xs)
    lam = safety
    for _ in range(8):
        if np.max(need - lam * base) <= 0.0:
            return interp_fn(ys, lam * xs, concave=True, extend=True)
        lam *= 2.0
    raise ConstructionFailed(
        "safety scaling exhausted without certifying h0(g(s)s) >= s^2 + g(s)^2")


def verify_h0(spec: FeedbackSpec, h0: MonotoneFn, n: int) -> float:
    """Max over n uniform s in [-1, 1] of s^2 + g(s)^2 - h0(g(s)s).

    A result <= 0 certifies the defining inequality on the grid.  Samples
    whose argument g(s)s underflows to exact zero while s != 0 are skipped:
    they measure double-precision underflow of exponentially flat laws,
    not the inequality.
    """
    if n < 2:
        raise ValueError("need at least 2 samples")
    s = np.linspace(-1.0, 1.0, n)
    gs = eval_g(spec, s)
    args = gs * s
    live = (args > 0.0) | (s == 0.0)
    return float(np.max(s[live] ** 2 + gs[live] ** 2 - h0(args[live])))
