import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpcs.errors import ConfigurationError, ContractViolation
from dpcs.rewards import (RewardParams, cost_reward, discounted_return, load_stats, par, slot_reward,
                          terminal_reward, total_cost)


def test_cost_reward():
    assert cost_reward(2.7, 1.5) == pytest.approx(4.05)
    assert cost_reward(3.3, 0.0) == 0.0
    assert cost_reward(0.5, 10) == pytest.approx(5.0)
    with pytest.raises(ContractViolation):
        cost_reward(-1.0, 1.0)


def test_terminal_reward_cases():
    assert terminal_reward(5, 144, 3.0) == 0.0
    assert terminal_reward(144, 144, 2.0) == pytest.approx(-120.0)
    assert terminal_reward(144, 144, 0.0) == 50.0


def test_reward_sign_convention():
    r2 = terminal_reward(10, 10, 0.0)
    r1 = cost_reward(2.0, 3.0)
    assert slot_reward(r2, r1) == r2 - r1 == 44.0


def test_reward_params_invariants():
    with pytest.raises(ConfigurationError):
        RewardParams(eps2=0.0)
    with pytest.raises(ConfigurationError):
        RewardParams(eps1_coeff=1.0)
    with pytest.raises(ConfigurationError):
        RewardParams(gamma=1.5)


def test_discounted_return_examples():
    assert discounted_return([1, 2, 3], 0.0) == 1.0
    assert discounted_return([1, 2, 3], 1.0) == 6.0
    assert discounted_return([1, 2, 3], 0.5) == 2.75
    with pytest.raises(ContractViolation):
        discounted_return([], 0.9)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=30))
def test_discounted_return_limits(rs):
    assert discounted_return(rs, 0.0) == rs[0]
    assert discounted_return(rs, 1.0) == pytest.approx(math.fsum(rs), abs=1e-9)


def test_par_examples():
    assert par([4.0, 4.0, 4.0]) == 0.0
    assert par([1.0, 3.0]) == pytest.approx(math.log(1.5), abs=1e-12)
    with pytest.raises(ContractViolation):
        par([0.0, 0.0])


def test_par_table_row_uses_natural_log():
    peak, mean = 8.9874, 5.8644
    series = [peak, 2 * mean - peak]
    assert par(series) == pytest.approx(0.4269, abs=1e-4)
    assert math.log10(peak / mean) == pytest.approx(0.1854, abs=1e-4)


@given(st.lists(st.floats(0.01, 1e3), min_size=1, max_size=40), st.floats(1e-3, 1e3))
def test_par_scale_invariant(series, c):
    assert par([c * v for v in series]) == pytest.approx(par(series), abs=1e-9)


def test_total_cost():
    assert total_cost([2.0], [[3.0]]) == 6.0
    assert total_cost([1.0, 5.0], np.zeros((2, 3))) == 0.0
    assert total_cost([1.0, 2.0], [[1.0], [1.0]]) == 3.0
    with pytest.raises(ContractViolation):
        total_cost([1.0, 2.0], [[1.0]])


def test_load_stats():
    s = load_stats([5, 5, 5], [1, 1, 1], [[5], [5], [5]])
    assert (s.peak_kw, s.mean_kw, s.variance, s.par, s.total_cost) == (5, 5, 0, 0, 15)
    assert load_stats([1, 3], [1, 1], [[1], [3]]).variance == 1.0
    assert list(s.as_row()) == ["peak (kW)", "mean (kW)", "Var", "PAR", "Cost"]
    with pytest.raises(ContractViolation):
        load_stats([], [], [])
