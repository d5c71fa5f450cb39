from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpcs.errors import ConfigurationError, ContractViolation
from dpcs.pricing import DEFAULT_PRICE, PriceParams, generation_cost, rtp, tier_multiplier


@pytest.mark.parametrize("load, expected", [(0, 0.5), (10, 2.7), (100, 202.5)])
def test_generation_cost_hand_values(load, expected):
    assert generation_cost(load) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("load, expected", [(10, 2.7), (60, 81.07), (150, 589.55)])
def test_rtp_hand_values(load, expected):
    assert rtp(load) == pytest.approx(expected, rel=1e-12)


def test_tier_boundaries_belong_to_lower_tier():
    assert rtp(50.0) == generation_cost(50.0)
    assert rtp(100.0) == pytest.approx(1.1 * generation_cost(100.0), rel=1e-15)
    assert rtp(np.nextafter(50.0, 51.0)) == pytest.approx(1.1 * generation_cost(50.0), rel=1e-12)


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_invalid_load_rejected(bad):
    with pytest.raises(ContractViolation):
        rtp(bad)


def test_price_params_invariants():
    with pytest.raises(ConfigurationError):
        PriceParams(sigma1=0.9)
    with pytest.raises(ConfigurationError):
        PriceParams(sigma1=1.4, sigma2=1.3)
    with pytest.raises(ConfigurationError):
        PriceParams(delta1=120.0, delta2=100.0)
    with pytest.raises(ConfigurationError):
        PriceParams(alpha1=-0.1)


def test_generation_cost_matches_exact_rational_evaluation():
    rng = np.random.default_rng(11)
    p = DEFAULT_PRICE
    a1, a2, a3 = (Fraction(v) for v in (p.alpha1, p.alpha2, p.alpha3))
    for load in rng.uniform(0, 300, 1000):
        L = Fraction(float(load))
        exact = a1 * L * L + a2 * L + a3
        got = generation_cost(float(load))
        assert abs(Fraction(got) - exact) / exact < Fraction(1, 10**12)


loads = st.floats(min_value=0, max_value=1e4, allow_nan=False)


@given(loads, loads)
def test_rtp_monotone(a, b):
    lo, hi = sorted((a, b))
    assert rtp(lo) <= rtp(hi)


@given(loads)
def test_tier_ratio(load):
    lam = generation_cost(load)
    assert rtp(load) == tier_multiplier(load) * lam
    assert min(abs(rtp(load) / lam - m) for m in (1.0, 1.1, 1.3)) <= 1e-15 * 1.3


@settings(max_examples=50)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 2), st.floats(1, 2), st.floats(0, 1), loads, loads)
def test_rtp_monotone_any_valid_params(a1, a2, a3, s1, extra, x, y):
    p = PriceParams(a1, a2, a3, s1, s1 + extra, 30.0, 80.0)
    lo, hi = sorted((x, y))
    assert rtp(lo, p) <= rtp(hi, p)
