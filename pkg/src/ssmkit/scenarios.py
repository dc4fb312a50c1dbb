"""Scripted two-vehicle scenarios for demonstrating a derived measure.

A scenario fixes both speed profiles as piecewise-linear (time, speed) knots
plus an initial gap; evaluating a table along it produces the risk signal
over time, next to the closed-form reference for comparison.  Three fixture
scenarios ship with the package: a comfortable deceleration, a late hard
brake that ends in a near miss, and the same conflict from a shorter gap
that ends in a collision.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .reference import WsParams, ws_probability
from .regression import SsmTable, nw_evaluate_batch

SCENARIO_FORMAT = "ssm-scenario"
SCENARIO_VERSION = 1

FIXTURE_NAMES = ("safe", "risky", "collision")


@dataclass(frozen=True)
class Scenario:
    name: str
    initial_gap: float
    lead_profile: tuple   # ((t, v), ...) piecewise-linear speed knots
    ego_profile: tuple

    def __post_init__(self):
        if self.initial_gap <= 0:
            raise ValueError("initial_gap must be positive")
        for prof in (self.lead_profile, self.ego_profile):
            times = [t for t, _ in prof]
            if len(prof) < 1 or times != sorted(times):
                raise ValueError("profiles need knots with non-decreasing times")
            if any(v < 0 for _, v in prof):
                raise ValueError("profile speeds must be non-negative")

    @property
    def end_time(self) -> float:
        return max(self.lead_profile[-1][0], self.ego_profile[-1][0])


def scenario_to_json(scenario: Scenario, path) -> None:
    doc = {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "name": scenario.name,
        "initial_gap_m": scenario.initial_gap,
        "lead_speed_knots": [list(k) for k in scenario.lead_profile],
        "ego_speed_knots": [list(k) for k in scenario.ego_profile],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def scenario_from_json(path) -> Scenario:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != SCENARIO_FORMAT:
        raise ValueError(f"not a scenario file: {path}")
    if doc.get("version") != SCENARIO_VERSION:
        raise ValueError(f"unsupported scenario version {doc.get('version')}")
    return Scenario(
        name=doc.get("name", "scenario"),
        initial_gap=float(doc["initial_gap_m"]),
        lead_profile=tuple((float(t), float(v)) for t, v in doc["lead_speed_knots"]),
        ego_profile=tuple((float(t), float(v)) for t, v in doc["ego_speed_knots"]),
    )


def load_fixture(name: str) -> Scenario:
    if name not in FIXTURE_NAMES:
        raise ValueError(f"unknown fixture {name!r}; available: {FIXTURE_NAMES}")
    ref = resources.files("ssmkit").joinpath(f"data/scenarios/{name}.json")
    with resources.as_file(ref) as path:
        return scenario_from_json(path)


def simulate_scenario(scenario: Scenario, dt: float = 0.1):
    """Kinematic playback: (t, v_ego, v_lead, gap), truncated at a crash."""
    steps = int(round(scenario.end_time / dt))
    t = dt * np.arange(steps + 1)
    lt = np.asarray([k[0] for k in scenario.lead_profile])
    lv = np.asarray([k[1] for k in scenario.lead_profile])
    et = np.asarray([k[0] for k in scenario.ego_profile])
    ev = np.asarray([k[1] for k in scenario.ego_profile])
    v_lead = np.interp(t, lt, lv)
    v_ego = np.interp(t, et, ev)
    closing = v_lead - v_ego
    gap = np.empty_like(t)
    gap[0] = scenario.initial_gap
    gap[1:] = scenario.initial_gap + np.cumsum(0.5 * (closing[1:] + closing[:-1]) * dt)
    hit = np.nonzero(gap <= 0)[0]
    if hit.size:
        end = hit[0] + 1
        return t[:end], v_ego[:end], v_lead[:end], gap[:end]
    return t, v_ego, v_lead, gap


def scenario_features(mode: str, t, v_ego, v_lead, gap) -> tuple[np.ndarray, np.ndarray]:
    """Query rows for a table of the given mode plus a validity mask."""
    if mode == "ws":
        dv = v_ego - v_lead
        valid = (dv > 0) & (gap > 0)
        ttc = np.where(valid, gap / np.where(valid, dv, 1.0), np.nan)
        return np.column_stack([dv, ttc]), valid
    if mode == "data":
        valid = gap > 0
        a_lead = np.gradient(v_lead, t)
        ln_gap = np.log(np.where(valid, gap, 1.0))
        return np.column_stack([v_lead, a_lead, v_ego, ln_gap]), valid
    raise ValueError(f"cannot evaluate a {mode!r}-mode table along a scenario")


def evaluate_scenario(table: SsmTable, scenario: Scenario, dt: float = 0.1,
                      ws_params: WsParams | None = None) -> dict:
    """Risk over time: the table's estimate plus the closed-form reference.

    Rows where the measure is undefined (not closing, or after a crash in
    the source data) report probability zero.
    """
    mode = table.metadata.get("mode", "ws")
    t, v_ego, v_lead, gap = simulate_scenario(scenario, dt)
    x, valid = scenario_features(mode, t, v_ego, v_lead, gap)
    p_table = np.zeros_like(t)
    if valid.any():
        p_table[valid] = nw_evaluate_batch(table, x[valid])

    params = ws_params or WsParams()
    dv = v_ego - v_lead
    p_ref = np.zeros_like(t)
    for i in range(len(t)):
        if dv[i] > 0 and gap[i] > 0:
            p_ref[i] = ws_probability(dv[i], gap[i] / dv[i], params)
    return {
        "t": t, "v_ego": v_ego, "v_lead": v_lead, "gap": gap,
        "p_table": p_table, "p_reference": p_ref,
        "crashed": bool(gap[-1] <= 0),
    }
