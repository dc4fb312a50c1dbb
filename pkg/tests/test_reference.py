import math

import numpy as np
import pytest

from ssmkit.reference import (WsParams, lognormal_params, t_max_react, thw, ttc,
                              ws_probability)
from ssmkit.simulation import sample_madr, sample_reaction_time


def test_ttc_values():
    assert ttc(20.0, 13.0) == pytest.approx(20.0 / 13.0)  # ~1.54 s
    assert ttc(30.0, 10.0) == pytest.approx(3.0)
    assert ttc(20.0, 0.0) is None
    assert ttc(20.0, -5.0) is None
    with pytest.raises(ValueError):
        ttc(0.0, 5.0)


def test_thw_values():
    assert thw(20.0, 25.0) == pytest.approx(0.8)
    assert thw(36.0, 18.0) == pytest.approx(2.0)
    assert thw(20.0, 0.0) is None


def test_t_max_react():
    assert t_max_react(2.0, 20.0, 10.0) == pytest.approx(1.0)
    assert t_max_react(10.0 / (2 * 8.0), 10.0, 8.0) == pytest.approx(0.0)
    assert t_max_react(3.0, 10.0, 12.7) == pytest.approx(3.0 - 10.0 / 25.4)


def test_lognormal_parameterization():
    mu, sigma = lognormal_params(0.92, 0.28)
    # moments of the distribution itself round-trip
    mean = math.exp(mu + sigma**2 / 2)
    var = (math.exp(sigma**2) - 1) * math.exp(2 * mu + sigma**2)
    assert mean == pytest.approx(0.92, abs=1e-12)
    assert math.sqrt(var) == pytest.approx(0.28, abs=1e-12)


def test_ws_probability_cases():
    assert ws_probability(-5.0, 2.0) == 0.0
    assert ws_probability(0.0, 2.0) == 0.0
    # required deceleration 30/(2*1) = 15 > 12.7
    assert ws_probability(30.0, 1.0) == 1.0


def test_ws_probability_monotone():
    ttcs = np.arange(0.5, 4.01, 0.25)
    for dv in (5.0, 15.0, 25.0, 35.0):
        vals = [ws_probability(dv, t) for t in ttcs]
        assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))
    dvs = np.arange(1.0, 40.1, 1.5)
    for t in (0.8, 1.5, 2.5, 3.5):
        vals = [ws_probability(dv, t) for dv in dvs]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= ws_probability(dv, t) <= 1.0
               for dv in dvs for t in (0.6, 2.0, 3.9))


def test_ws_probability_continuous_at_case_boundary():
    # As the required deceleration approaches the upper bound, the crash
    # probability approaches the "certain" case from below.
    params = WsParams()
    ttc_val = 1.0
    for eps in (1e-2, 1e-4, 1e-6):
        dv = 2 * ttc_val * (params.madr_upper - eps)
        assert ws_probability(dv, ttc_val, params) > 1 - 1e-3
    assert ws_probability(2 * ttc_val * params.madr_upper, ttc_val, params) == 1.0


def test_ws_probability_against_monte_carlo():
    rng = np.random.default_rng(2024)
    n = 10**6
    t_react = sample_reaction_time(rng, size=n)
    madr = sample_madr(rng, size=n)
    for dv, t in ((20.0, 2.0), (10.0, 1.5), (30.0, 2.5), (6.0, 1.0)):
        t_max = t - dv / (2 * madr)
        mc = float(np.mean(t_react > np.maximum(t_max, 0.0)))
        se = math.sqrt(mc * (1 - mc) / n)
        assert ws_probability(dv, t) == pytest.approx(mc, abs=max(3 * se, 1e-4))
