"""Decay-envelope calculus for damped waves.

Pipeline: from a damping law's auxiliary map h0 and the integrability
exponent p0, build h = h1 + h0(./measQT), fold in the observability
constant K, and form the nonlinearity

    q = I - (I + (I+h)^{-1} (K^{-1} .))^{-1}.

The envelope S solves S' + q(S) = 0: the energy of the damped wave obeys
E(t) <= S(t/T0 - 1).  The same machinery exposes the discrete recursion
s_{m+1} + p(s_{m+1}) = s_m the ODE dominates, a simplified ODE driven by
the dominant part h_b of h, and a catalog of closed-form decay laws
(exponential, power, logarithmic families) used as golden references.

Inversions inside q are cached on a geometric grid and interpolated;
a direct bisection fallback keeps relative accuracy near 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .feedback import (
    MonotoneFn,
    NoConvergence,
    OutOfRange,
    identity_fn,
    invert_monotone,
    power_fn,
)


class InvalidExponents(Exception):
    """Growth orders violate the admissibility constraints (p0 vs r)."""


class MissingD0(Exception):
    """A velocity-norm bound D0 is required when the law is not linear at infinity."""


class StepTooLarge(Exception):
    """An RK4 stage left the admissible region; shrink dt."""


class UnknownExample(Exception):
    """Closed-form catalog has no entry under the requested identifier."""


class InvalidParams(Exception):
    """Closed-form parameters missing or out of range."""


# ---------------------------------------------------------------------------
# problem description and curve containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayProblem:
    """Inputs of the envelope construction for one damping law."""

    h0: MonotoneFn
    r: float                    # growth order at infinity
    p0: float                   # integrability exponent
    measQT: float               # measure of the space-time cylinder
    C_obs: float                # observability constant (user-supplied)
    E0: float = 1.0             # initial energy
    T0: float = 1.0             # control time
    gamma: float = 0.9
    D0: float | None = None     # velocity-norm bound, needed when r != 1

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError("r must be positive")
        if self.r < 1.0 and self.p0 <= 2.0:
            raise InvalidExponents("sublinear case requires p0 > 2")
        if self.r > 1.0 and self.p0 <= 2.0 * self.r:
            raise InvalidExponents("superlinear case requires p0 > 2r")
        if self.measQT <= 0.0:
            raise ValueError("measQT must be positive")
        if self.C_obs <= 0.0:
            raise ValueError("C_obs must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma in (0,1)")
        if self.E0 < 0.0:
            raise ValueError("E0 must be nonnegative")
        if self.T0 <= 0.0:
            raise ValueError("T0 must be positive")

    def growth_class(self) -> str:
        if self.r < 1.0:
            return "sublinear"
        if self.r > 1.0:
            return "superlinear"
        return "linear"


@dataclass
class EnvelopeCurve:
    """Sampled envelope S(t); t counts dimensionless multiples of T0."""

    t: np.ndarray
    S: np.ndarray

    def validate(self) -> None:
        if np.any(self.S < 0.0):
            raise ValueError("envelope went negative")
        if np.any(np.diff(self.S) > 1e-12 * max(1.0, float(self.S[0]))):
            raise ValueError("envelope not non-increasing")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,S\n")
            for ti, si in zip(self.t, self.S):
                fh.write(f"{ti:.17g},{si:.17g}\n")


@dataclass
class SequenceResult:
    """Values of the discrete recursion s_{m+1} + p(s_{m+1}) = s_m."""

    s: np.ndarray


# ---------------------------------------------------------------------------
# building blocks: h1, h, K
# ---------------------------------------------------------------------------

def build_h1(r: float, p0: float) -> MonotoneFn:
    """Growth-compensating map h1 determined by the infinity order r.

    r < 1: s^((p0-2)/(p0-r-1)); r > 1: s^((p0-2r)/(p0-r-1)); r = 1: identity.
    """
    if r <= 0.0:
        raise InvalidExponents("r must be positive")
    if r == 1.0:
        return identity_fn()
    if r < 1.0:
        if p0 <= 2.0:
            raise InvalidExponents("sublinear case requires p0 > 2")
        return power_fn(1.0, (p0 - 2.0) / (p0 - r - 1.0))
    if p0 <= 2.0 * r:
        raise InvalidExponents("superlinear case requires p0 > 2r")
    return power_fn(1.0, (p0 - 2.0 * r) / (p0 - r - 1.0))


def build_h(h0: MonotoneFn, h1: MonotoneFn, measQT: float) -> MonotoneFn:
    """h(x) = h1(x) + h0(x / measQT); concave when both parts are."""
    if measQT <= 0.0:
        raise ValueError("measQT must be positive")
    x_max = min(h1.x_max, h0.x_max * measQT)
    return MonotoneFn(
        lambda x: h1.fn(np.asarray(x, float)) + h0.fn(np.asarray(x, float) / measQT),
        x_max,
        h0.concave and h1.concave,
    )


def K_constant(case: str, C_obs: float, D0: float | None,
               r: float, p0: float) -> float:
    """Observability-weighted constant K for the three growth classes."""
    if C_obs <= 0.0:
        raise ValueError("C_obs must be positive")
    if case == "linear":
        return C_obs
    if case not in ("superlinear", "sublinear"):
        raise ValueError(f"unknown growth class {case!r}")
    if D0 is None or D0 <= 0.0:
        raise MissingD0(f"{case} case requires a positive velocity bound D0")
    if p0 - r - 1.0 <= 0.0:
        raise InvalidExponents("need p0 > r + 1")
    if case == "superlinear":
        return C_obs * D0 ** (p0 * (r - 1.0) / (p0 - r - 1.0))
    # sublinear: the printed exponent uses the sublinear order itself
    return C_obs * D0 ** (p0 * (1.0 - r) / (p0 - r - 1.0))


# ---------------------------------------------------------------------------
# the q-map
# ---------------------------------------------------------------------------

def _grid(top: float, n: int) -> np.ndarray:
    # reaches far below top so maps that are steep at the origin (sublinear
    # powers) are still resolved by interpolation rather than the slow
    # exact fallback
    return np.concatenate([[0.0], np.geomspace(1e-30 * top, top, n)])


def _q_from_inner(zs: np.ndarray, ell_vals: np.ndarray,
                  concave: bool) -> MonotoneFn:
    """q(x) = x - z(x) with z + ell(z) = x, from cached ell samples.

    Piecewise-linear inversion of the forward map z -> z + ell(z).  The
    chord under-estimates z for convex maps, hence under-estimates q when
    ell is concave; envelopes solved with it then decay no faster than
    the true ones, which is the safe direction for domination checks.
    Below the first grid node q(x)/x matches the true ratio to within
    zs[1]/mz[1], so no exact fallback is needed there.
    """
    mz = zs + ell_vals
    if not np.all(np.diff(mz) > 0.0):
        raise NoConvergence("inner map not strictly increasing on cache grid")

    def fn(x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = arr - np.interp(arr, mz, zs)
        return out.reshape(np.shape(x))

    return MonotoneFn(fn, float(mz[-1]), concave)


def build_q(h: MonotoneFn, K: float, x_max: float = 1000.0,
            n_grid: int = 8001) -> MonotoneFn:
    """q = I - (I + (I+h)^{-1}(K^{-1} .))^{-1} as an evaluable map.

    Satisfies 0 <= q(x) <= x, q(0) = 0, q increasing; concave when h is.
    The returned domain bound may exceed ``x_max`` slightly (it is the
    image of the cached grid under I + ell).
    """
    if K <= 0.0:
        raise ValueError("K must be positive")
    if x_max <= 0.0:
        raise ValueError("x_max must be positive")
    wtop = min(x_max / K, h.x_max)
    ws = _grid(wtop, n_grid)
    iph = ws + h(ws)

    ztop = min(x_max, K * float(iph[-1]))
    zs = _grid(ztop, n_grid)
    ell_vals = np.interp(zs / K, iph, ws)
    return _q_from_inner(zs, ell_vals, h.concave)


def build_recursion_q(p: MonotoneFn, x_max: float = 1000.0,
                      n_grid: int = 8001) -> MonotoneFn:
    """q = I - (I+p)^{-1}: the ODE nonlinearity dominating the recursion."""
    if x_max <= 0.0:
        raise ValueError("x_max must be positive")
    ztop = min(x_max, p.x_max)
    zs = _grid(ztop, n_grid)
    return _q_from_inner(zs, p(zs), p.concave)


def build_problem_q(prob: DecayProblem, x_max: float | None = None) -> MonotoneFn:
    """Assemble q for a DecayProblem: h1, h, K, then build_q."""
    h1 = build_h1(prob.r, prob.p0)
    h = build_h(prob.h0, h1, prob.measQT)
    K = K_constant(prob.growth_class(), prob.C_obs, prob.D0, prob.r, prob.p0)
    if x_max is None:
        x_max = max(100.0, 10.0 * prob.E0)
    return build_q(h, K, x_max=x_max)


# ---------------------------------------------------------------------------
# ODE solves
# ---------------------------------------------------------------------------

def _rk4_decay(rate: Callable[[float], float], E0: float, t_max: float,
               dt: float) -> EnvelopeCurve:
    """Fixed-step classical RK4 for S' = -rate(S) with clamping at 0."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t_max < 0.0:
        raise ValueError("t_max must be nonnegative")
    if E0 < 0.0:
        raise ValueError("E0 must be nonnegative")
    n = int(round(t_max / dt))
    S = np.empty(n + 1)
    s = float(E0)
    S[0] = s
    floor = -1e-7 * max(E0, 1.0)
    half = 0.5 * dt
    sixth = dt / 6.0

    def guarded(x: float) -> float:
        if x < floor:
            raise StepTooLarge(f"RK4 stage at {x:.3e} below 0; reduce dt={dt}")
        return float(rate(x)) if x > 0.0 else 0.0

    for i in range(n):
        k1 = -guarded(s)
        k2 = -guarded(s + half * k1)
        k3 = -guarded(s + half * k2)
        k4 = -guarded(s + dt * k3)
        s_new = s + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if s_new < floor:
            raise StepTooLarge(f"RK4 step went negative ({s_new:.3e}); reduce dt={dt}")
        s = s_new if s_new > 0.0 else 0.0
        S[i + 1] = s
    return EnvelopeCurve(np.arange(n + 1) * dt, S)


def solve_envelope(q, E0: float, t_max: float, dt: float) -> EnvelopeCurve:
    """Integrate S' + q(S) = 0, S(0) = E0.  ``q`` is a MonotoneFn or callable."""
    return _rk4_decay(lambda s: float(q(s)), E0, t_max, dt)


def solve_simplified(h_b: MonotoneFn, gamma: float, K: float, E0: float,
                     t_max: float, dt: float) -> EnvelopeCurve:
    """Integrate the simplified envelope ODE S' + h_b^{-1}(gamma K^{-1} S) = 0.

    Uses the exact inverse when h_b carries one; otherwise a cached
    piecewise-linear inverse built from forward samples.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma in (0,1)")
    if K <= 0.0:
        raise ValueError("K must be positive")
    c = gamma / K
    if h_b.inverse is not None:
        inv = h_b.inverse
    else:
        ymax = c * E0
        if math.isfinite(h_b.x_max):
            wtop = h_b.x_max
            if float(h_b(wtop)) < ymax:
                raise OutOfRange("h_b range does not cover gamma*E0/K")
        else:
            wtop = 1.0
            grow = 0
            while float(h_b(wtop)) < ymax:
                wtop *= 2.0
                grow += 1
                if grow > 400:
                    raise OutOfRange("h_b appears bounded below gamma*E0/K")
        ws = _grid(wtop, 8001)
        hv = h_b(ws)
        if not np.all(np.diff(hv) > 0.0):
            raise OutOfRange("h_b not strictly increasing on inversion grid")
        inv = lambda y: np.interp(y, hv, ws)
    return _rk4_decay(lambda s: float(inv(c * s)), E0, t_max, dt)


def lasiecka_sequence(p: MonotoneFn, s0: float, M: int) -> SequenceResult:
    """Equality case of the recursion: s_{m+1} solves s + p(s) = s_m."""
    if s0 < 0.0:
        raise ValueError("s0 must be nonnegative")
    if M < 0:
        raise ValueError("M must be nonnegative")
    ip = MonotoneFn(lambda x: np.asarray(x, float) + p.fn(np.asarray(x, float)),
                    p.x_max)
    out = np.empty(M + 1)
    out[0] = s0
    s = float(s0)
    for m in range(M):
        s = invert_monotone(ip, s, tol=1e-12 * max(1.0, s))
        out[m + 1] = s
    return SequenceResult(out)


def check_split(h_b: MonotoneFn, h_s: MonotoneFn, j_max: int = 30) -> np.ndarray:
    """Ratios h_s/h_b on x = 2^-j; raises unless they vanish in the limit."""
    xs = 2.0 ** -np.arange(0, j_max + 1, dtype=float)
    num = np.atleast_1d(h_s(xs))
    den = np.atleast_1d(h_b(xs))
    if np.any(den <= 0.0):
        raise InvalidParams("h_b must be positive on the sample sequence")
    ratios = num / den
    if not (ratios[-1] < 0.1 and ratios[-1] <= 0.5 * ratios[0]):
        raise InvalidParams("h_s is not negligible against h_b near 0")
    return ratios


# ---------------------------------------------------------------------------
# closed-form decay catalog
# ---------------------------------------------------------------------------

CATALOG = (
    "exp_origin",
    "poly_origin",
    "sublin_origin",
    "exp_cubic",
    "exp_abs",
    "sublin_infinity",
    "superlin_infinity",
)


def _need(params: Mapping, key: str, example_id: str) -> float:
    try:
        return float(params[key])
    except (KeyError, TypeError, ValueError):
        raise InvalidParams(f"{example_id} requires parameter {key!r}") from None


def _common(params: Mapping, example_id: str) -> tuple[float, float]:
    E0 = _need(params, "E0", example_id)
    T0 = float(params.get("T0", 1.0))
    if E0 <= 0.0:
        raise InvalidParams("E0 must be positive for the closed forms")
    if T0 <= 0.0:
        raise InvalidParams("T0 must be positive")
    return E0, T0


def exp_origin_coefficient(K: float, measQT: float, m0: float, M0: float) -> float:
    """Decay rate of the fully linear law: K^{-1}measQT over
    measQT(2 + K^{-1}) + M0 + 1/m0."""
    if min(K, measQT, m0, M0) <= 0.0:
        raise InvalidParams("exp_origin constants must be positive")
    return (measQT / K) / (measQT * (2.0 + 1.0 / K) + M0 + 1.0 / m0)


def _resolve_C(params: Mapping, example_id: str) -> float:
    if "C" in params:
        C = float(params["C"])
    elif example_id == "exp_origin":
        C = exp_origin_coefficient(
            _need(params, "K", example_id), _need(params, "measQT", example_id),
            _need(params, "m0", example_id), _need(params, "M0", example_id))
    else:
        raise InvalidParams(f"{example_id} requires parameter 'C'")
    if C <= 0.0:
        raise InvalidParams("decay constant C must be positive")
    return C


def _resolve_alpha(params: Mapping, example_id: str) -> float:
    if "alpha" in params:
        alpha = float(params["alpha"])
    elif "gamma" in params and "K" in params:
        alpha = float(params["gamma"]) / float(params["K"])
    else:
        raise InvalidParams(f"{example_id} requires 'alpha' (or gamma and K)")
    if alpha <= 0.0:
        raise InvalidParams("alpha must be positive")
    return alpha


def closed_form(example_id: str, params: Mapping, t):
    """Evaluate a catalog decay bound at time t (scalar or array, t >= T0)."""
    if example_id not in CATALOG:
        raise UnknownExample(f"no closed form named {example_id!r}")
    E0, T0 = _common(params, example_id)
    tt = np.asarray(t, dtype=float)
    tp = tt / T0 - 1.0
    if np.any(tp < -1e-12):
        raise InvalidParams("closed forms are decay bounds for t >= T0")
    tp = np.maximum(tp, 0.0)

    if example_id == "exp_origin":
        C = _resolve_C(params, example_id)
        out = E0 * np.exp(-C * tp)
    elif example_id == "poly_origin":
        C = _resolve_C(params, example_id)
        p = _need(params, "p", example_id)
        if p <= 1.0:
            raise InvalidParams("poly_origin requires p > 1")
        out = (E0 ** ((1.0 - p) / 2.0) + (p - 1.0) * C / 2.0 * tp) ** (-2.0 / (p - 1.0))
    elif example_id == "sublin_origin":
        C = _resolve_C(params, example_id)
        th = _need(params, "theta", example_id)
        if not (0.0 < th < 1.0):
            raise InvalidParams("sublin_origin requires 0 < theta < 1")
        out = (((1.0 - th) / (2.0 * th)) * (C / 2.0) * tp
               + E0 ** ((th - 1.0) / (2.0 * th))) ** (-2.0 * th / (1.0 - th))
    elif example_id == "exp_cubic":
        C = _resolve_C(params, example_id)
        out = (1.0 / C) / np.log(C * tp + math.exp(1.0 / (C * E0)))
    elif example_id == "exp_abs":
        C = _resolve_C(params, example_id)
        out = (1.0 / C) / np.log(math.exp(1.0 / math.sqrt(C * E0)) + C / 2.0 * tp) ** 2
    elif example_id == "sublin_infinity":
        alpha = _resolve_alpha(params, example_id)
        th = _need(params, "theta", example_id)
        p0 = _need(params, "p0", example_id)
        if not (0.0 < th < 1.0) or p0 <= 2.0:
            raise InvalidParams("sublin_infinity requires 0 < theta < 1 and p0 > 2")
        rho = (p0 - th - 1.0) / (p0 - 2.0)
        t0 = float(params.get("t0", T0))
        tq = np.maximum(tt / t0 - 1.0, 0.0)
        out = (E0 ** (1.0 - rho) + alpha ** rho * (rho - 1.0) * tq) ** (-(p0 - 2.0) / (1.0 - th))
    else:  # superlin_infinity
        alpha = _resolve_alpha(params, example_id)
        r = _need(params, "r", example_id)
        p0 = _need(params, "p0", example_id)
        if r <= 1.0 or p0 <= 2.0 * r:
            raise InvalidParams("superlin_infinity requires r > 1 and p0 > 2r")
        rho = (p0 - r - 1.0) / (p0 - 2.0 * r)
        t0 = float(params.get("t0", T0))
        tq = np.maximum(tt / t0 - 1.0, 0.0)
        out = (E0 ** (1.0 - rho)
               + alpha ** rho * (r - 1.0) / (p0 - 2.0 * r) * tq) ** (-(p0 - 2.0 * r) / (r - 1.0))
    return float(out) if np.ndim(t) == 0 else out


def example_ode_rate(example_id: str, params: Mapping) -> Callable[[float], float]:
    """Right-hand side S -> rate(S) of the ODE solved exactly by closed_form.

    The sublinear-origin family uses coefficient C/2 (the rate whose exact
    solution is the printed bound).
    """
    if example_id not in CATALOG:
        raise UnknownExample(f"no closed form named {example_id!r}")
    _common(params, example_id)

    if example_id == "exp_origin":
        C = _resolve_C(params, example_id)
        return lambda s: C * s
    if example_id == "poly_origin":
        C = _resolve_C(params, example_id)
        p = _need(params, "p", example_id)
        e = (p + 1.0) / 2.0
        return lambda s: C * s ** e
    if example_id == "sublin_origin":
        C = _resolve_C(params, example_id)
        th = _need(params, "theta", example_id)
        e = (1.0 + th) / (2.0 * th)
        return lambda s: (C / 2.0) * s ** e
    if example_id == "exp_cubic":
        C = _resolve_C(params, example_id)
        return lambda s: C * C * s * s * math.exp(-1.0 / (C * s)) if s > 0.0 else 0.0
    if example_id == "exp_abs":
        C = _resolve_C(params, example_id)
        return lambda s: (C * s) ** 1.5 * math.exp(-1.0 / math.sqrt(C * s)) if s > 0.0 else 0.0
    if example_id == "sublin_infinity":
        alpha = _resolve_alpha(params, example_id)
        th = _need(params, "theta", example_id)
        p0 = _need(params, "p0", example_id)
        rho = (p0 - th - 1.0) / (p0 - 2.0)
        a = alpha ** rho
        return lambda s: a * s ** rho
    alpha = _resolve_alpha(params, example_id)
    r = _need(params, "r", example_id)
    p0 = _need(params, "p0", example_id)
    rho = (p0 - r - 1.0) / (p0 - 2.0 * r)
    a = alpha ** rho
    return lambda s: a * s ** rho


def match_closed_form(curve: EnvelopeCurve, example_id: str,
                      params: Mapping) -> float:
    """Max relative deviation of a solved envelope from the closed form.

    The curve's time axis is the envelope variable t' = t/T0 - 1; the
    closed form is evaluated at the matching absolute times.
    """
    T0 = float(params.get("T0", 1.0))
    t_abs = (curve.t + 1.0) * T0
    ref = closed_form(example_id, params, t_abs)
    return float(np.max(np.abs(curve.S - ref) / ref))
