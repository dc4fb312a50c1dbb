import numpy as np
import pytest

from ssmkit.scenarios import (FIXTURE_NAMES, Scenario, evaluate_scenario,
                              load_fixture, scenario_from_json, scenario_to_json,
                              simulate_scenario)


class TestScenarioFormat:
    def test_round_trip(self, tmp_path):
        sc = Scenario("demo", 25.0, ((0, 20), (5, 10)), ((0, 22), (5, 22)))
        path = tmp_path / "demo.json"
        scenario_to_json(sc, path)
        back = scenario_from_json(path)
        assert back == sc

    def test_rejects_foreign_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"format": "something"}')
        with pytest.raises(ValueError):
            scenario_from_json(p)

    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario("bad", -1.0, ((0, 20),), ((0, 20),))
        with pytest.raises(ValueError):
            Scenario("bad", 10.0, ((5, 20), (0, 20)), ((0, 20),))
        with pytest.raises(ValueError):
            Scenario("bad", 10.0, ((0, -3),), ((0, 20),))

    def test_fixtures_load(self):
        for name in FIXTURE_NAMES:
            sc = load_fixture(name)
            assert sc.name == name
        with pytest.raises(ValueError):
            load_fixture("nope")


class TestPlayback:
    def test_equal_speeds_constant_gap(self):
        sc = Scenario("flat", 30.0, ((0, 15), (10, 15)), ((0, 15), (10, 15)))
        t, v_e, v_l, gap = simulate_scenario(sc)
        assert np.allclose(gap, 30.0)
        assert len(t) == 101

    def test_closing_truncates_at_contact(self):
        sc = Scenario("hit", 10.0, ((0, 10), (10, 10)), ((0, 15), (10, 15)))
        t, v_e, v_l, gap = simulate_scenario(sc)
        # closing at 5 m/s from 10 m: contact at t = 2.0
        assert gap[-1] <= 0
        assert t[-1] == pytest.approx(2.0, abs=0.1)

    def test_piecewise_linear_exact_integration(self):
        sc = Scenario("ramp", 50.0, ((0, 10), (10, 10)), ((0, 20), (10, 0)))
        t, v_e, v_l, gap = simulate_scenario(sc)
        # ego decelerates linearly 20 -> 0 over 10 s; closed-form gap
        expected = 50.0 + 10 * t - (20 * t - t ** 2)
        assert np.allclose(gap, expected, atol=1e-9)


class TestEvaluation:
    def test_ws_fixture_ordering(self, ws_table):
        maxima = {}
        for name in FIXTURE_NAMES:
            res = evaluate_scenario(ws_table, load_fixture(name))
            maxima[name] = res["p_table"].max()
        assert maxima["safe"] < 0.1
        assert maxima["risky"] > maxima["safe"]
        assert maxima["risky"] >= 0.8
        assert maxima["collision"] >= 0.95

    def test_collision_fixture_crashes(self, ws_table):
        res = evaluate_scenario(ws_table, load_fixture("collision"))
        assert res["crashed"]
        assert res["gap"][-1] <= 0

    def test_equal_speeds_near_zero_probability(self, ws_table):
        sc = Scenario("flat", 30.0, ((0, 15), (10, 15)), ((0, 15), (10, 15)))
        res = evaluate_scenario(ws_table, sc)
        assert res["p_table"].max() < 0.05
        assert np.all(res["p_reference"] == 0.0)

    def test_reference_curve_tracks_table(self, ws_table):
        res = evaluate_scenario(ws_table, load_fixture("collision"))
        mask = res["p_reference"] > 0.2
        assert mask.any()
        diff = np.abs(res["p_table"][mask] - res["p_reference"][mask])
        assert diff.mean() < 0.15

    def test_trend_tables_rejected(self):
        from ssmkit.density import BandwidthMatrix
        from ssmkit.regression import DesignPointSet, SsmTable
        dps = DesignPointSet(np.zeros((2, 5)), np.ones(5), "greedy-cover")
        table = SsmTable(dps, [0.1, 0.2], BandwidthMatrix.scalar(1, 5),
                         {"mode": "trend"})
        with pytest.raises(ValueError):
            evaluate_scenario(table, load_fixture("safe"))
