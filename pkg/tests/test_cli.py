import json

import pandas as pd
import pytest

from ssmkit.cli import main
from ssmkit.regression import load_table

CONFIG = """
root_seed = 11

[estimator]
delta = 0.05

[fleet]
vehicle_count = 5
duration = 90.0
speed_regimes = [[12.0, 2.0], [19.0, 2.5]]

[derive]
d = 4
cover_weights = [0.25, 4.0, 0.25, 0.25]
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.toml").write_text(CONFIG)
    return root


@pytest.fixture(scope="module")
def ingested(workdir):
    out = workdir / "ingest"
    assert main(["ingest", "--config", str(workdir / "cfg.toml"),
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def data_run(workdir, ingested):
    out = workdir / "derive_data"
    assert main(["derive", "--mode", "data", "--config", str(workdir / "cfg.toml"),
                 "--pairs", str(ingested / "pairs.csv"), "--out", str(out)]) == 0
    return out


class TestIngest:
    def test_outputs_exist(self, ingested):
        assert (ingested / "pairs.csv").exists()
        episodes = pd.read_csv(ingested / "episodes.csv", comment="#")
        assert {"follower_id", "leader_id", "start_time", "end_time",
                "samples", "pairs"} <= set(episodes.columns)
        summary = json.loads((ingested / "ingest_summary.json").read_text())
        assert len(episodes) == summary["episodes"]
        assert summary["pairs"] > 50
        assert summary["pairs"] == sum(summary["pairs_per_episode"])
        assert summary["metadata"]["seed"] == 11

    def test_metadata_header(self, ingested):
        head = (ingested / "pairs.csv").read_text().splitlines()[:3]
        assert head[0].startswith("# tool_version=")
        assert head[1].startswith("# config_hash=")
        assert head[2] == "# seed=11"

    def test_deterministic(self, workdir, ingested):
        out2 = workdir / "ingest2"
        assert main(["ingest", "--config", str(workdir / "cfg.toml"),
                     "--out", str(out2)]) == 0
        assert (out2 / "pairs.csv").read_bytes() == (ingested / "pairs.csv").read_bytes()

    def test_empty_trajectory_file(self, workdir):
        empty = workdir / "empty.csv"
        empty.write_text("")
        rc = main(["ingest", "--trajectories", str(empty),
                   "--out", str(workdir / "never")])
        assert rc == 2

    def test_csv_trajectories_accepted(self, workdir):
        from ssmkit.trajectory import SyntheticFleetConfig, synthesize_fleet, tracks_to_csv
        tracks = synthesize_fleet(SyntheticFleetConfig(vehicle_count=3, duration=60.0, seed=4))
        path = workdir / "fleet.csv"
        tracks_to_csv(tracks, path)
        out = workdir / "ingest_csv"
        assert main(["ingest", "--trajectories", str(path), "--out", str(out)]) == 0
        assert (out / "pairs.csv").exists()


class TestDerive:
    def test_data_mode_outputs(self, data_run):
        table = load_table(data_run / "table.json")
        assert table.metadata["mode"] == "data"
        assert table.design_points.source == "greedy-cover"
        assert (data_run / "density_model.npz").exists()

    def test_data_table_cover_certified(self, data_run, ingested):
        from ssmkit.cli import load_pairs_csv
        from ssmkit.regression import cover_satisfied
        table = load_table(data_run / "table.json")
        x, _ = load_pairs_csv(ingested / "pairs.csv")
        assert cover_satisfied(table.points, x, table.design_points.weight_diag)

    def test_ws_mode(self, workdir):
        out = workdir / "derive_ws"
        assert main(["derive", "--mode", "ws", "--config", str(workdir / "cfg.toml"),
                     "--out", str(out)]) == 0
        table = load_table(out / "table.json")
        assert table.design_points.count == 756

    def test_deterministic(self, workdir, ingested, data_run):
        out2 = workdir / "derive_data2"
        assert main(["derive", "--mode", "data", "--config", str(workdir / "cfg.toml"),
                     "--pairs", str(ingested / "pairs.csv"), "--out", str(out2)]) == 0
        assert ((out2 / "table.json").read_bytes()
                == (data_run / "table.json").read_bytes())

    def test_missing_pairs_is_config_error(self, workdir):
        rc = main(["derive", "--mode", "data", "--out", str(workdir / "never2")])
        assert rc == 2


class TestEvaluate:
    def test_round_trip(self, workdir, data_run):
        table = load_table(data_run / "table.json")
        q = pd.DataFrame(table.points[:20],
                         columns=["v_lead", "a_lead", "v_ego", "ln_gap"])
        qpath = workdir / "queries.csv"
        q.to_csv(qpath, index=False)
        out = workdir / "eval"
        assert main(["evaluate", "--table", str(data_run / "table.json"),
                     "--queries", str(qpath), "--out", str(out)]) == 0
        res = pd.read_csv(out / "probabilities.csv", comment="#")
        assert len(res) == 20
        assert res["probability"].between(0, 1).all()

    def test_malformed_rows_reported(self, workdir, data_run):
        qpath = workdir / "bad_queries.csv"
        qpath.write_text("a,b,c,d\n1.0,0.0,2.0,2.5\nnot,a,number,row\n")
        out = workdir / "eval_bad"
        rc = main(["evaluate", "--table", str(data_run / "table.json"),
                   "--queries", str(qpath), "--out", str(out)])
        assert rc == 2
        assert (out / "errors.csv").exists()
        res = pd.read_csv(out / "probabilities.csv", comment="#")
        assert len(res) == 1


class TestScenarioAndFutures:
    def test_simulate_scenario_fixture(self, workdir):
        ws_out = workdir / "derive_ws"
        if not (ws_out / "table.json").exists():
            assert main(["derive", "--mode", "ws", "--config",
                         str(workdir / "cfg.toml"), "--out", str(ws_out)]) == 0
        out = workdir / "scenario"
        assert main(["simulate-scenario", "--table", str(ws_out / "table.json"),
                     "--scenario", "safe", "--out", str(out)]) == 0
        frame = pd.read_csv(out / "scenario_safe.csv", comment="#")
        assert list(frame.columns) == ["t", "v_ego", "v_lead", "gap",
                                       "p_table", "p_reference"]
        assert frame["p_table"].max() < 0.1

    def test_sample_futures(self, workdir, data_run):
        out = workdir / "futures"
        assert main(["sample-futures", "--model", str(data_run / "density_model.npz"),
                     "--v-lead", "15.0", "--a-lead", "1.0", "--count", "25",
                     "--seed", "5", "--out", str(out)]) == 0
        frame = pd.read_csv(out / "future_profiles.csv", comment="#")
        assert frame.shape == (25, 50)
        assert (frame.to_numpy() >= 0).all()


class TestBenchmarkCommand:
    def test_trend_report(self, workdir, ingested):
        cfg = workdir / "trend_cfg.toml"
        cfg.write_text("""
root_seed = 11

[estimator]
delta = 0.05

[derive]
trend_axes = [[0.0, 20.0, 5.0], [10.0, 30.0, 5.0], [0.5, 1.5, 0.25],
              [5.0, 30.0, 6.25], [4.0, 10.0, 1.5]]
""")
        out = workdir / "derive_trend"
        assert main(["derive", "--mode", "trend", "--config", str(cfg),
                     "--pairs", str(ingested / "pairs.csv"), "--out", str(out),
                     "--seed", "3"]) == 0
        rep = workdir / "trend_report"
        assert main(["benchmark", "--table", str(out / "table.json"),
                     "--out", str(rep)]) == 0
        assert (rep / "trend_report.csv").exists()
        doc = json.loads((rep / "trend_report.json").read_text())
        assert [v["label"] for v in doc["variables"]] == \
            ["delta_v", "v_ego", "t_react", "gap", "madr"]

    def test_wrong_table_rejected(self, workdir):
        ws_out = workdir / "derive_ws"
        rc = main(["benchmark", "--table", str(ws_out / "table.json"),
                   "--out", str(workdir / "never3")])
        assert rc == 2


class TestReplicateWs:
    def test_report_and_curves(self, workdir):
        out = workdir / "replicate"
        assert main(["replicate-ws", "--config", str(workdir / "cfg.toml"),
                     "--out", str(out), "--seed", "1"]) == 0
        report = json.loads((out / "replication.json").read_text())
        assert report["delta_0.02"]["mean_abs_error"] < 0.03
        curves = pd.read_csv(out / "curves.csv", comment="#")
        assert set(curves["delta_v"]) == {10.0, 20.0, 30.0}
        # risk ordering of the curves at a fixed TTC
        at_1s = curves[(curves["ttc"].round(1) == 1.0) & (curves["delta"] == 0.02)]
        by_dv = at_1s.sort_values("delta_v")["analytic"].to_numpy()
        assert by_dv[0] < by_dv[1] < by_dv[2]
        # certain-crash corner of the analytic curve
        corner = curves[(curves["delta_v"] == 30.0) & (curves["ttc"] == 0.5)]
        assert (corner["analytic"] == 1.0).all()


class TestConfig:
    def test_unknown_key_rejected(self, workdir):
        bad = workdir / "bad.toml"
        bad.write_text("root_seed = 1\nwhatever = 2\n")
        rc = main(["ingest", "--config", str(bad), "--out", str(workdir / "never4")])
        assert rc == 2

    def test_unknown_nested_key_rejected(self, workdir):
        bad = workdir / "bad2.toml"
        bad.write_text("[estimator]\nupsilon = 3\n")
        rc = main(["ingest", "--config", str(bad), "--out", str(workdir / "never5")])
        assert rc == 2

    def test_json_config_accepted(self, workdir):
        cfg = workdir / "cfg.json"
        cfg.write_text(json.dumps({"root_seed": 4, "fleet": {
            "vehicle_count": 3, "duration": 45.0}}))
        out = workdir / "ingest_json"
        assert main(["ingest", "--config", str(cfg), "--out", str(out)]) == 0

    def test_missing_config_file(self, workdir):
        rc = main(["ingest", "--config", str(workdir / "nope.toml"),
                   "--out", str(workdir / "never6")])
        assert rc == 2

    def test_wrong_type_rejected(self, workdir):
        bad = workdir / "bad3.toml"
        bad.write_text('root_seed = "abc"\n')
        rc = main(["ingest", "--config", str(bad), "--out", str(workdir / "never7")])
        assert rc == 2
