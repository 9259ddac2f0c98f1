"""Damping-law models: evaluation, growth orders, h0 construction/inversion."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavedecay.feedback import (
    FeedbackSpec,
    InfinityLinear,
    InfinityPower,
    MonotoneFn,
    NoConvergence,
    OriginExpAbs,
    OriginExpCubic,
    OriginLinear,
    OriginPower,
    OutOfRange,
    build_h0,
    eval_g,
    identity_fn,
    interp_fn,
    invert_monotone,
    linear_fn,
    order_at_infinity,
    power_fn,
    verify_h0,
)


def _spec(origin, infinity=None):
    return FeedbackSpec(origin, infinity or InfinityLinear(1.0, 1.0))


# ---------------------------------------------------------------------------
# spec validation
# ---------------------------------------------------------------------------

def test_origin_bounds_must_order():
    with pytest.raises(ValueError, match="0 < m0 <= M0"):
        _spec(OriginLinear(m0=2.0, M0=1.0))
    with pytest.raises(ValueError, match="0 < m0 <= M0"):
        _spec(OriginPower(3.0, m0=0.0, M0=1.0))


def test_exponents_must_be_positive():
    with pytest.raises(ValueError, match="exponent"):
        _spec(OriginPower(exponent=-0.5))
    with pytest.raises(ValueError, match="order r"):
        _spec(OriginLinear(), InfinityPower(r=0.0))


def test_infinity_bounds_must_order():
    with pytest.raises(ValueError, match="0 < m <= M"):
        _spec(OriginLinear(), InfinityLinear(m=3.0, M=1.0))


# ---------------------------------------------------------------------------
# eval_g
# ---------------------------------------------------------------------------

def test_eval_g_power_origin_point():
    # sqrt branch: g(0.25) = 0.25^0.5 with unit coefficient
    spec = _spec(OriginPower(0.5, 1.0, 1.0))
    assert eval_g(spec, 0.25) == pytest.approx(0.5, abs=1e-15)


def test_eval_g_zero_is_zero():
    for origin in (OriginLinear(), OriginPower(3.0), OriginExpCubic(), OriginExpAbs()):
        assert eval_g(_spec(origin), 0.0) == 0.0


def test_eval_g_exp_cubic_at_one():
    spec = _spec(OriginExpCubic())
    assert eval_g(spec, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_eval_g_is_odd():
    spec = _spec(OriginPower(3.0, 0.5, 2.0), InfinityPower(1.5, 1.0, 2.0))
    s = np.linspace(-5.0, 5.0, 401)
    np.testing.assert_allclose(eval_g(spec, -s), -eval_g(spec, s), atol=1e-15)


def test_eval_g_continuous_across_branch_point():
    for inf in (InfinityLinear(0.5, 2.0), InfinityPower(2.0, 1.0, 3.0)):
        spec = _spec(OriginPower(3.0, 1.0, 2.0), inf)
        lo = eval_g(spec, 1.0 - 1e-12)
        hi = eval_g(spec, 1.0 + 1e-12)
        assert hi - lo == pytest.approx(0.0, abs=1e-9)


def test_infinity_bounds_bracket_tail():
    spec = _spec(OriginPower(3.0, 1.0, 2.0), InfinityPower(1.5, 0.5, 2.0))
    m, M = spec.infinity_bounds()
    r = spec.infinity.r
    s = np.linspace(1.0 + 1e-9, 20.0, 500)
    gs = eval_g(spec, s) * s
    assert np.all(gs >= m * s ** (r + 1.0) - 1e-12)
    assert np.all(gs <= M * s ** (r + 1.0) + 1e-12)


def test_order_at_infinity():
    assert order_at_infinity(_spec(OriginLinear(), InfinityPower(3.0, 1.0, 1.0))) == 3.0
    assert order_at_infinity(_spec(OriginLinear(), InfinityLinear())) == 1.0
    assert order_at_infinity(_spec(OriginLinear(), InfinityPower(0.5, 1.0, 1.0))) == 0.5


# ---------------------------------------------------------------------------
# invert_monotone
# ---------------------------------------------------------------------------

def test_invert_linear():
    assert invert_monotone(linear_fn(2.0), 1.0, 1e-12) == pytest.approx(0.5, abs=1e-11)


def test_invert_zero_target_is_origin():
    assert invert_monotone(identity_fn(), 0.0) == 0.0


def test_invert_sqrt_sum():
    # x + sqrt(x) = 2 at x = 1
    f = MonotoneFn(lambda x: x + np.sqrt(x), math.inf, True)
    assert invert_monotone(f, 2.0, 1e-12) == pytest.approx(1.0, abs=1e-10)


def test_invert_rejects_negative_target():
    with pytest.raises(OutOfRange):
        invert_monotone(identity_fn(), -1.0)


def test_invert_rejects_target_beyond_finite_domain():
    f = interp_fn([0.0, 1.0], [0.0, 3.0])
    with pytest.raises(OutOfRange):
        invert_monotone(f, 4.0)


def test_invert_no_convergence_on_jump_discontinuity():
    # a jump across the target starves bisection: the bracket shrinks but
    # |f(mid) - y| stays at half the jump height
    f = MonotoneFn(lambda x: np.where(x > 1.0 / 3.0, x + 10.0, x), 2.0, False)
    with pytest.raises(NoConvergence):
        invert_monotone(f, 5.0, tol=1e-8)


def test_invert_rejects_nonpositive_tol():
    with pytest.raises(ValueError):
        invert_monotone(identity_fn(), 1.0, tol=0.0)


@given(st.floats(0.01, 50.0))
@settings(max_examples=40, deadline=None)
def test_invert_is_right_inverse(y):
    f = MonotoneFn(lambda x: x + np.sqrt(x), math.inf, True)
    x = invert_monotone(f, y, 1e-11)
    assert abs(float(f(x)) - y) <= 1e-10


# ---------------------------------------------------------------------------
# build_h0 / verify_h0
# ---------------------------------------------------------------------------

def test_h0_linear_origin_is_tight():
    spec = _spec(OriginLinear(1.0, 1.0))
    h0 = build_h0(spec)
    xs = np.linspace(0.0, 3.0, 7)
    np.testing.assert_allclose(h0(xs), 2.0 * xs, rtol=1e-15)
    # equality case: h0(g(s)s) = 2 s^2 = s^2 + g(s)^2 exactly
    assert verify_h0(spec, h0, 1001) == pytest.approx(0.0, abs=1e-12)


def test_h0_sublinear_power_formula():
    spec = _spec(OriginPower(0.5, 1.0, 1.0))
    h0 = build_h0(spec)
    # c = 2(M0^2+1)/m0^(2/3) = 4, exponent 2/3
    assert h0(8.0) == pytest.approx(16.0, rel=1e-13)
    assert verify_h0(spec, h0, 10001) <= 1e-12


def test_h0_wrong_candidate_reports_violation():
    spec = _spec(OriginLinear(1.0, 1.0))
    bad = identity_fn()
    # g(s) = s makes the deficit s^2, maximal at the endpoints
    assert verify_h0(spec, bad, 1001) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("origin", [OriginPower(3.0, 1.0, 1.0),
                                    OriginExpCubic(),
                                    OriginExpAbs()])
def test_h0_numeric_route_certifies(origin):
    spec = _spec(origin)
    h0 = build_h0(spec)
    assert h0.concave
    assert float(h0(0.0)) == 0.0
    assert verify_h0(spec, h0, 10001) <= 0.0


def test_h0_numeric_route_rejects_bad_delta():
    with pytest.raises(ValueError):
        build_h0(_spec(OriginPower(3.0)), delta=0.0)


def test_h0_concavity_on_random_triples():
    h0 = build_h0(_spec(OriginExpCubic()))
    rng = np.random.default_rng(7)
    for _ in range(200):
        x, y, z = np.sort(rng.uniform(0.0, 2.0, 3))
        if z - x < 1e-9:
            continue
        lam = (y - x) / (z - x)
        chord = (1.0 - lam) * h0(x) + lam * h0(z)
        assert h0(y) >= chord - 1e-12


# ---------------------------------------------------------------------------
# randomized invariants
# ---------------------------------------------------------------------------

_origin = st.one_of(
    st.builds(OriginLinear,
              st.floats(0.1, 1.0), st.floats(1.0, 3.0)),
    st.builds(OriginPower,
              st.floats(0.3, 3.0), st.floats(0.1, 1.0), st.floats(1.0, 3.0)),
    st.just(OriginExpCubic()),
    st.just(OriginExpAbs()),
)
_infinity = st.one_of(
    st.builds(InfinityLinear, st.floats(0.1, 1.0), st.floats(1.0, 3.0)),
    st.builds(InfinityPower,
              st.floats(0.4, 2.5), st.floats(0.1, 1.0), st.floats(1.0, 3.0)),
)


@given(_origin, _infinity)
@settings(max_examples=60, deadline=None)
def test_g_monotone_and_sign(origin, infinity):
    spec = FeedbackSpec(origin, infinity)
    s = np.linspace(-10.0, 10.0, 2001)
    gs = eval_g(spec, s)
    assert np.all(np.diff(gs) >= -1e-12)
    # strict positivity of g(s)s off zero, checked where exponentially
    # flat laws have not underflowed to float zero
    assert np.all(gs * s >= 0.0)
    far = np.abs(s) >= 0.05
    assert np.all(gs[far] * s[far] > 0.0)


@given(st.floats(0.1, 1.0), st.floats(1.0, 3.0),
       st.floats(0.3, 0.95))
@settings(max_examples=40, deadline=None)
def test_h0_formula_route_always_certifies(m0, M0, exponent):
    spec = _spec(OriginPower(exponent, m0, M0))
    h0 = build_h0(spec)
    assert h0.concave
    assert verify_h0(spec, h0, 2001) <= 1e-10


def test_h0_numeric_route_with_small_delta_still_certifies():
    # the inversion interval [0, delta] is a knob; the affine extension
    # must keep the certificate valid well beyond it
    spec = _spec(OriginPower(3.0))
    h0 = build_h0(spec, delta=0.25)
    assert verify_h0(spec, h0, 10001) <= 0.0


# ---------------------------------------------------------------------------
# helper constructors
# ---------------------------------------------------------------------------

def test_power_fn_concavity_flag():
    assert power_fn(1.0, 0.5).concave
    assert not power_fn(1.0, 2.0).concave


def test_interp_fn_requires_origin_and_monotonicity():
    with pytest.raises(ValueError):
        interp_fn([0.1, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        interp_fn([0.0, 1.0, 2.0], [0.0, 1.0, 0.5])


def test_interp_fn_affine_extension():
    f = interp_fn([0.0, 1.0, 2.0], [0.0, 2.0, 3.0], extend=True)
    assert float(f(4.0)) == pytest.approx(5.0, rel=1e-14)  # slope 1 past x=2
    assert float(f.inverse(5.0)) == pytest.approx(4.0, rel=1e-14)
