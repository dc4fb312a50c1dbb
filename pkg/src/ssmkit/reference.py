"""Closed-form crash probability for the constant-speed-leader conflict.

The measure assumes the leader holds its speed while the ego vehicle closes
at ``delta_v``; the driver reacts after a log-normal reaction time and then
brakes with a truncated-normal maximum deceleration.  The crash probability
has a closed inner integral (the reaction-time CDF), so only the outer
integral over the deceleration is evaluated numerically.

Also provides the elementary proximity indicators TTC and THW.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.integrate import quad
from scipy.special import ndtr


def ttc(gap: float, delta_v: float) -> float | None:
    """Time to collision: gap / closing speed. None when not closing."""
    if gap <= 0:
        raise ValueError("ttc requires gap > 0")
    if delta_v <= 0:
        return None
    return gap / delta_v


def thw(gap: float, v_ego: float) -> float | None:
    """Time headway: gap / follower speed. None when the follower is stopped."""
    if gap <= 0:
        raise ValueError("thw requires gap > 0")
    if v_ego == 0:
        return None
    return gap / v_ego


def t_max_react(ttc_value: float, delta_v: float, a_max: float) -> float:
    """Latest reaction time that still avoids the crash at deceleration a_max."""
    if a_max <= 0:
        raise ValueError("a_max must be positive")
    return ttc_value - delta_v / (2.0 * a_max)


def lognormal_params(mean: float, std: float) -> tuple[float, float]:
    """(mu, sigma) of the underlying normal from the distribution's own moments."""
    sigma2 = math.log(1.0 + (std / mean) ** 2)
    mu = math.log(mean) - 0.5 * sigma2
    return mu, math.sqrt(sigma2)


@dataclass(frozen=True)
class WsParams:
    """Driver-response distribution parameters of the reference measure."""

    react_mean: float = 0.92   # s, mean of the log-normal reaction time
    react_std: float = 0.28    # s, std of the log-normal reaction time
    madr_mean: float = 9.7     # m/s^2
    madr_std: float = 1.3      # m/s^2
    madr_lower: float = 4.2    # m/s^2
    madr_upper: float = 12.7   # m/s^2

    def __post_init__(self):
        if not (0 < self.madr_lower < self.madr_upper):
            raise ValueError("need 0 < madr_lower < madr_upper")
        if self.react_mean <= 0 or self.react_std <= 0:
            raise ValueError("reaction moments must be positive")


def _lognormal_cdf(t: float, mu: float, sigma: float) -> float:
    if t <= 0:
        return 0.0
    return float(ndtr((math.log(t) - mu) / sigma))


def ws_probability(delta_v: float, ttc_value: float,
                   params: WsParams | None = None,
                   tol: float = 1e-6) -> float:
    """Crash probability given closing speed and TTC.

    0 when not closing, 1 when even the strongest deceleration cannot avoid
    the crash.  In between, the probability that the driver reacts in time,
    integrated over the deceleration distribution, is subtracted from 1.
    """
    if params is None:
        params = WsParams()
    if delta_v <= 0:
        return 0.0
    if ttc_value <= 0:
        raise ValueError("ttc must be positive when delta_v > 0")
    required = delta_v / (2.0 * ttc_value)
    if required >= params.madr_upper:
        return 1.0

    mu, sigma = lognormal_params(params.react_mean, params.react_std)
    m, s = params.madr_mean, params.madr_std
    z_lo = (params.madr_lower - m) / s
    z_hi = (params.madr_upper - m) / s
    trunc_mass = ndtr(z_hi) - ndtr(z_lo)

    def integrand(a: float) -> float:
        t_max = ttc_value - delta_v / (2.0 * a)
        density = math.exp(-0.5 * ((a - m) / s) ** 2) / (s * math.sqrt(2 * math.pi) * trunc_mass)
        return _lognormal_cdf(t_max, mu, sigma) * density

    lower = max(params.madr_lower, required)
    avoid, _ = quad(integrand, lower, params.madr_upper, epsabs=tol, epsrel=0.0, limit=200)
    return min(max(1.0 - avoid, 0.0), 1.0)
