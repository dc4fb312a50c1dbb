"""Forward simulation of a single leader-follower conflict.

Two ego models are provided: the reaction-then-full-braking driver used for
the constant-speed-leader replication, and an IDM+ follower whose first
braking onset is delayed by the sampled reaction time.  Every run terminates
at a crash (gap <= 0) or at the first step where the gap stops decreasing,
and reports the scalar result w: the impact speed difference (<= 0) on a
crash, the minimum gap (> 0) otherwise.

The batch entry points in ``kernels`` implement the same stepping; the
single-run functions here are the readable reference and produce traces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .reference import WsParams, lognormal_params


@dataclass(frozen=True)
class EgoResponseDraw:
    """One sampled driver response: reaction time and braking capability."""

    reaction_time: float  # s
    madr: float           # m/s^2, magnitude of the maximum deceleration

    def __post_init__(self):
        if self.reaction_time <= 0:
            raise ValueError("reaction_time must be positive")
        if not (4.2 <= self.madr <= 12.7):
            raise ValueError("madr outside [4.2, 12.7]")


@dataclass(frozen=True)
class IdmPlusParams:
    """IDM+ car-following parameters (the min-of-terms variant)."""

    v0: float = 33.3        # desired speed, m/s
    headway: float = 1.2    # desired time headway T, s
    s0: float = 3.0         # standstill gap, m
    a: float = 1.25         # maximum comfortable acceleration, m/s^2
    b: float = 2.09         # comfortable deceleration, m/s^2
    delta_exp: float = 4.0  # acceleration exponent

    def __post_init__(self):
        for name in ("v0", "headway", "s0", "a", "b", "delta_exp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def as_tuple(self) -> tuple:
        return (self.v0, self.headway, self.s0, self.a, self.b, self.delta_exp)


@dataclass(frozen=True)
class ScenarioState:
    t: float
    v_ego: float
    v_lead: float
    gap: float


@dataclass(frozen=True)
class SimulationOutcome:
    crashed: bool
    w: float
    t_end: float
    trace: np.ndarray | None = None  # columns: t, v_ego, v_lead, gap, a_ego

    def __post_init__(self):
        if self.crashed != (self.w <= 0):
            raise ValueError("outcome must satisfy crashed <=> w <= 0")


def sample_reaction_time(rng: np.random.Generator, params: WsParams | None = None,
                         size: int | None = None):
    """Log-normal reaction time with the stated mean/std of the distribution."""
    p = params or WsParams()
    mu, sigma = lognormal_params(p.react_mean, p.react_std)
    return rng.lognormal(mean=mu, sigma=sigma, size=size)


def sample_madr(rng: np.random.Generator, params: WsParams | None = None,
                size: int | None = None):
    """Truncated-normal braking capability via inverse CDF on the interval."""
    p = params or WsParams()
    lo = ndtr((p.madr_lower - p.madr_mean) / p.madr_std)
    hi = ndtr((p.madr_upper - p.madr_mean) / p.madr_std)
    u = lo + (hi - lo) * rng.random(size)
    return p.madr_mean + p.madr_std * ndtri(u)


def idm_plus_accel(state: ScenarioState, params: IdmPlusParams) -> float:
    """IDM+ acceleration demand at the given state."""
    if state.gap <= 0:
        raise ValueError("idm_plus_accel requires gap > 0")
    v, vl = state.v_ego, state.v_lead
    s_star = params.s0 + v * params.headway + v * (v - vl) / (2.0 * math.sqrt(params.a * params.b))
    return params.a * min(1.0 - (v / params.v0) ** params.delta_exp,
                          1.0 - (s_star / state.gap) ** 2)


def simulate_ws(delta_v: float, ttc: float, draw: EgoResponseDraw, dt: float = 0.1,
                keep_trace: bool = False) -> SimulationOutcome:
    """Conflict with a constant-speed leader and a react-then-brake ego.

    The ego closes at delta_v until the reaction time elapses, then sheds
    closing speed at the drawn deceleration, floored at zero (matching the
    leader speed ends the conflict).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if delta_v <= 0:
        # Not closing: the (delta_v, ttc) chart cannot produce a positive gap,
        # so report a unit clearance to keep the w-sign convention intact.
        gap0 = delta_v * ttc
        w = gap0 if gap0 > 0 else 1.0
        return SimulationOutcome(crashed=False, w=w, t_end=0.0, trace=None)

    # The speed trajectory is piecewise constant/linear (coast until the
    # reaction time, then brake at madr), so each step integrates the closing
    # distance exactly; dt only sets the grid on which termination is checked.
    gap = delta_v * ttc
    r = delta_v
    rows = []
    step = 0
    while True:
        t = step * dt
        t_next = (step + 1) * dt
        a_ego = -draw.madr if (t >= draw.reaction_time and r > 0) else 0.0
        if keep_trace:
            rows.append((t, r, 0.0, gap, a_ego))
        dist, new_r, impact = _ws_step(r, gap, draw.reaction_time, draw.madr, t, dt)
        new_gap = gap - dist
        step += 1
        if new_gap <= 0:
            trace = _close_trace(rows, t_next, new_r, 0.0, new_gap, keep_trace)
            return SimulationOutcome(crashed=True, w=-impact, t_end=t_next, trace=trace)
        if new_gap >= gap:
            trace = _close_trace(rows, t_next, new_r, 0.0, new_gap, keep_trace)
            return SimulationOutcome(crashed=False, w=gap, t_end=t_next, trace=trace)
        gap, r = new_gap, new_r


def _close_trace(rows, t, v_ego, v_lead, gap, keep_trace):
    if not keep_trace:
        return None
    rows.append((t, v_ego, v_lead, gap, 0.0))
    return np.asarray(rows)


def save_trace_csv(outcome: "SimulationOutcome", path, header_lines=()) -> None:
    """Dump a per-run state trace produced with keep_trace=True."""
    if outcome.trace is None:
        raise ValueError("outcome carries no trace; simulate with keep_trace=True")
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t,v_ego,v_lead,gap,a_ego\n")
        for row in outcome.trace:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _ws_step(r: float, gap: float, t_react: float, madr: float,
             t: float, dt: float) -> tuple[float, float, float]:
    """Exact closing distance over [t, t + dt] plus the end speed and the
    speed at which the gap would be consumed (the impact speed on a crash).

    The ego coasts at closing speed r until t_react, then sheds speed at
    madr, floored at zero; the braking onset may fall inside the step.
    """
    free = min(max(t_react - t, 0.0), dt)
    brake = dt - free
    new_r = r - madr * brake
    if new_r >= 0.0:
        brake_dist = r * brake - 0.5 * madr * brake * brake
    else:
        new_r = 0.0
        brake_dist = r * r / (2.0 * madr)
    dist = r * free + brake_dist
    if dist >= gap:
        # Crash inside this step: speed at the moment the gap closed.
        if r * free >= gap:
            impact = r
        else:
            impact = math.sqrt(max(r * r - 2.0 * madr * (gap - r * free), 0.0))
    else:
        impact = new_r
    return dist, new_r, impact


def _interp_knots(knots: np.ndarray, knot_dt: float, t: float) -> float:
    """Linear interpolation through speed knots, constant after the last one."""
    pos = t / knot_dt
    i = int(pos)
    if i >= len(knots) - 1:
        return float(knots[-1])
    frac = pos - i
    return float(knots[i] * (1.0 - frac) + knots[i + 1] * frac)


def lead_speed_at(t: float, initial: float, profile: np.ndarray, profile_dt: float) -> float:
    """Leader speed at time t; knots are clamped at zero before interpolating."""
    knots = np.maximum(np.concatenate([[initial], np.asarray(profile, dtype=float)]), 0.0)
    return _interp_knots(knots, profile_dt, t)


def simulate_longitudinal(x, future, params: IdmPlusParams, draw: EgoResponseDraw,
                          dt: float = 0.1, t_cap: float = 60.0,
                          keep_trace: bool = False,
                          profile_dt: float | None = None) -> SimulationOutcome:
    """Conflict with a sampled leader speed profile and an IDM+ ego.

    x = [v_lead, a_lead, v_ego, ln(gap)]; the future holds the leader speeds
    at dt, 2*dt, ... beyond the initial value.  The first IDM+ deceleration
    demand starts a reaction clock; the ego coasts until it expires, after
    which demands apply immediately, with deceleration capped at the drawn
    madr.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != 4:
        raise ValueError("x must be [v_lead, a_lead, v_ego, ln_gap]")
    future = np.asarray(future, dtype=float).ravel()
    if future.size == 0:
        raise ValueError("future profile is empty")
    if dt <= 0:
        raise ValueError("dt must be positive")

    v_ego = float(x[2])
    gap = math.exp(x[3])
    knots = np.maximum(np.concatenate([[x[0]], future]), 0.0)
    knot_dt = dt if profile_dt is None else profile_dt
    t_allow = math.inf
    seen_demand = False
    rows = []
    step = 0
    while True:
        t = step * dt
        t_next = (step + 1) * dt
        v_lead = _interp_knots(knots, knot_dt, t)
        demand = idm_plus_accel(ScenarioState(t, v_ego, v_lead, gap), params)
        if demand < 0 and not seen_demand:
            seen_demand = True
            t_allow = t + draw.reaction_time
        if seen_demand and t < t_allow:
            a_eff = 0.0
        elif demand < 0:
            a_eff = max(demand, -draw.madr)
        else:
            a_eff = demand
        if keep_trace:
            rows.append((t, v_ego, v_lead, gap, a_eff))

        v_lead_next = _interp_knots(knots, knot_dt, t_next)
        new_v = max(v_ego + a_eff * dt, 0.0)
        closing = 0.5 * (v_lead + v_lead_next) - 0.5 * (v_ego + new_v)
        new_gap = gap + closing * dt
        if new_gap <= 0:
            trace = _close_trace(rows, t_next, new_v, v_lead_next, new_gap, keep_trace)
            return SimulationOutcome(crashed=True, w=closing, t_end=t_next, trace=trace)
        if new_gap >= gap:
            trace = _close_trace(rows, t_next, new_v, v_lead_next, new_gap, keep_trace)
            return SimulationOutcome(crashed=False, w=gap, t_end=t_next, trace=trace)
        if t_next >= t_cap:
            trace = _close_trace(rows, t_next, new_v, v_lead_next, new_gap, keep_trace)
            return SimulationOutcome(crashed=False, w=new_gap, t_end=t_next, trace=trace)
        gap, v_ego = new_gap, new_v
        step += 1
