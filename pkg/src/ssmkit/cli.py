"""Command-line pipeline: ingest, derive, evaluate, replicate-ws, benchmark,
simulate-scenario, sample-futures.

Configuration lives in a TOML or JSON file (section layout documented in the
README); unknown keys are rejected.  Every command is deterministic given
the config and root seed, and every output file starts with a metadata
header naming the tool version, config hash, and seed.

Exit codes: 0 success, 1 internal failure, 2 invalid input or config.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .benchmark import (DEFAULT_TRENDS, compare_to_reference, run_trend_benchmark,
                        save_trend_report_csv, save_trend_report_json)
from .density import BandwidthMatrix
from .pipeline import (TREND_GRID, WS_GRID, DeriveSettings, FutureSampler,
                       config_hash, derive_data_table, derive_trend_table,
                       derive_ws_table, fit_future_density, load_density_model,
                       make_metadata, save_density_model)
from .probability import EstimatorConfig
from .reference import WsParams, ws_probability
from .regression import load_table, nw_evaluate_batch, save_table
from .scenarios import (FIXTURE_NAMES, evaluate_scenario, load_fixture,
                        scenario_from_json)
from .simulation import IdmPlusParams
from .trajectory import (SyntheticFleetConfig, build_situation_pairs,
                         extract_interactions, load_trajectories, pairs_to_arrays,
                         synthesize_fleet)

logger = logging.getLogger("ssmkit")


class CliError(Exception):
    """User-facing error: invalid input or configuration (exit code 2)."""


# ---------------------------------------------------------------- config ---

CONFIG_SCHEMA = {
    "root_seed": int,
    "estimator": {
        "delta": float, "n_min": int, "batch": int, "n_max": int,
        "estimator_kind": str, "result_bandwidth": float,
    },
    "simulation": {
        "dt": float, "t_cap": float,
        "idm": {"v0": float, "T": float, "s0": float, "a": float, "b": float,
                "delta_exp": float},
    },
    "fleet": {
        "vehicle_count": int, "duration": float, "speed_regimes": list,
        "seed": int, "period": float, "vehicle_length": float,
        "regime_dwell": float,
    },
    "extraction": {
        "begin_thw": float, "begin_gap": float, "end_thw": float, "end_gap": float,
        "stride": float, "horizon": int, "horizon_dt": float,
    },
    "derive": {
        "mode": str, "d": int, "cover_weights": list, "threads": int,
        "ws_axes": list, "trend_axes": list, "nw_bandwidth_diag": list,
    },
}


def _check_keys(data: dict, schema: dict, path: str = "") -> None:
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise CliError(f"unknown config key: {here}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise CliError(f"config key {here} must be a section")
            _check_keys(value, expected, here)
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise CliError(f"config key {here} must be a number")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise CliError(f"config key {here} must be an integer")
        elif not isinstance(value, expected):
            raise CliError(f"config key {here} must be of type {expected.__name__}")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    text = p.read_text()
    if p.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        try:
            import tomllib  # py3.11+
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(text)
    if not isinstance(data, dict):
        raise CliError("config root must be a table/object")
    _check_keys(data, CONFIG_SCHEMA)
    return data


@dataclass
class RunContext:
    config: dict = field(default_factory=dict)
    root_seed: int = 0
    threads: int = 1

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def estimator_config(self, **overrides) -> EstimatorConfig:
        section = dict(self.config.get("estimator", {}))
        section.update(overrides)
        if section.get("result_bandwidth") in (0, 0.0):
            section["result_bandwidth"] = None
        return EstimatorConfig(**section)

    def idm_params(self) -> IdmPlusParams:
        sec = dict(self.config.get("simulation", {}).get("idm", {}))
        if "T" in sec:
            sec["headway"] = sec.pop("T")
        return IdmPlusParams(**sec)

    def derive_settings(self, **est_overrides) -> DeriveSettings:
        sim = self.config.get("simulation", {})
        return DeriveSettings(
            root_seed=self.root_seed,
            estimator=self.estimator_config(**est_overrides),
            idm=self.idm_params(),
            dt=float(sim.get("dt", 0.1)),
            t_cap=float(sim.get("t_cap", 60.0)),
            threads=self.threads,
        )

    def fleet_config(self) -> SyntheticFleetConfig:
        sec = dict(self.config.get("fleet", {}))
        if "speed_regimes" in sec:
            sec["speed_regimes"] = tuple(tuple(float(v) for v in r)
                                         for r in sec["speed_regimes"])
        sec.setdefault("seed", self.root_seed)
        sec["idm"] = self.idm_params()
        return SyntheticFleetConfig(**sec)

    def header_lines(self, extra: dict | None = None) -> list[str]:
        items = {"tool_version": __version__, "config_hash": self.config_hash,
                 "seed": self.root_seed, **(extra or {})}
        return [f"{k}={v}" for k, v in items.items()]


def _write_csv(path, frame: pd.DataFrame, ctx: RunContext, extra=None) -> None:
    with open(path, "w") as fh:
        for line in ctx.header_lines(extra):
            fh.write(f"# {line}\n")
        frame.to_csv(fh, index=False)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -------------------------------------------------------------- commands ---

def cmd_ingest(args, ctx: RunContext) -> int:
    if args.trajectories:
        path = Path(args.trajectories)
        if not path.exists():
            raise CliError(f"trajectory file not found: {args.trajectories}")
        if path.stat().st_size == 0:
            raise CliError(f"trajectory file is empty: {args.trajectories}")
        result = load_trajectories(path)
        tracks, rejected = result.tracks, result.rejected
    else:
        tracks = synthesize_fleet(ctx.fleet_config())
        rejected = {}

    ext = ctx.config.get("extraction", {})
    episodes = extract_interactions(
        tracks,
        begin_thw=float(ext.get("begin_thw", 2.0)),
        begin_gap=float(ext.get("begin_gap", 20.0)),
        end_thw=float(ext.get("end_thw", 4.0)),
        end_gap=float(ext.get("end_gap", 40.0)),
    )
    pairs = []
    per_episode = []
    for ep in episodes:
        ep_pairs = build_situation_pairs(
            ep,
            stride=float(ext.get("stride", 1.0)),
            horizon=int(ext.get("horizon", 50)),
            horizon_dt=float(ext.get("horizon_dt", 0.1)),
        )
        per_episode.append(len(ep_pairs))
        pairs.extend(ep_pairs)
    if not pairs:
        raise CliError("no situation pairs could be extracted")

    x, y = pairs_to_arrays(pairs)
    out = _out_dir(args)
    frame = pd.DataFrame(x, columns=["v_lead", "a_lead", "v_ego", "ln_gap"])
    for k in range(y.shape[1]):
        frame[f"f{k:03d}"] = y[:, k]
    _write_csv(out / "pairs.csv", frame, ctx)
    ep_frame = pd.DataFrame({
        "follower_id": [e.follower_id for e in episodes],
        "leader_id": [e.leader_id for e in episodes],
        "start_time": [e.start_time for e in episodes],
        "end_time": [e.end_time for e in episodes],
        "samples": [len(e) for e in episodes],
        "pairs": per_episode,
    })
    _write_csv(out / "episodes.csv", ep_frame, ctx)

    summary = {
        "episodes": len(episodes),
        "pairs": len(pairs),
        "pairs_per_episode": per_episode,
        "rejected_rows": rejected,
    }
    with open(out / "ingest_summary.json", "w") as fh:
        json.dump({"metadata": make_metadata("ingest", ctx.root_seed, ctx.config),
                   **summary}, fh, indent=2)
    logger.info("ingest: %d episodes, %d pairs", len(episodes), len(pairs))
    print(f"episodes={len(episodes)} pairs={len(pairs)} rejected={sum(rejected.values())}")
    return 0


def load_pairs_csv(path) -> tuple[np.ndarray, np.ndarray]:
    frame = pd.read_csv(path, comment="#")
    x_cols = ["v_lead", "a_lead", "v_ego", "ln_gap"]
    f_cols = [c for c in frame.columns if c.startswith("f")]
    if not set(x_cols) <= set(frame.columns) or not f_cols:
        raise CliError(f"not a pairs file (missing columns): {path}")
    return frame[x_cols].to_numpy(float), frame[sorted(f_cols)].to_numpy(float)


def cmd_derive(args, ctx: RunContext) -> int:
    derive_cfg = ctx.config.get("derive", {})
    mode = args.mode or derive_cfg.get("mode", "data")
    out = _out_dir(args)
    settings = ctx.derive_settings()
    meta = make_metadata(mode, ctx.root_seed, ctx.config)
    bw_diag = derive_cfg.get("nw_bandwidth_diag")
    nw_bw = BandwidthMatrix(np.diag(np.asarray(bw_diag, float))) if bw_diag else None
    t0 = time.time()
    if mode == "ws":
        axes = [tuple(a) for a in derive_cfg.get("ws_axes", [])] or WS_GRID
        table = derive_ws_table(settings, grid=axes, nw_bandwidth=nw_bw)
    elif mode in ("data", "trend"):
        if not args.pairs:
            raise CliError(f"--pairs is required for mode {mode}")
        x, y = load_pairs_csv(args.pairs)
        d = int(derive_cfg.get("d", 4))
        if mode == "data":
            weights = derive_cfg.get("cover_weights", [0.25, 4.0, 0.25, 0.25])
            table, model = derive_data_table(x, y, settings, d=d,
                                             cover_weights=tuple(weights),
                                             nw_bandwidth=nw_bw)
        else:
            model = fit_future_density(x, y, d=d)
            axes = [tuple(a) for a in derive_cfg.get("trend_axes", [])] or TREND_GRID
            table = derive_trend_table(model, settings, grid=axes, nw_bandwidth=nw_bw)
        save_density_model(out / "density_model.npz", model, meta)
    else:
        raise CliError(f"unknown derive mode: {mode}")
    save_table(out / "table.json", table)
    n_pts = table.design_points.count
    logger.info("derived %s table: %d points in %.1f s", mode, n_pts, time.time() - t0)
    print(f"mode={mode} design_points={n_pts} out={out / 'table.json'}")
    return 0


def cmd_evaluate(args, ctx: RunContext) -> int:
    table = load_table(args.table)
    out = _out_dir(args)
    frame = pd.read_csv(args.queries, comment="#", header=0)
    d = table.design_points.dim
    if frame.shape[1] != d:
        raise CliError(f"query file has {frame.shape[1]} columns, table needs {d}")
    values = frame.to_numpy()
    bad_rows = [i for i in range(len(values))
                if not np.all(np.isfinite(pd.to_numeric(values[i], errors="coerce")))]
    good = np.setdiff1d(np.arange(len(values)), bad_rows)
    queries = values[good].astype(float)
    t0 = time.time()
    probs = nw_evaluate_batch(table, queries) if len(queries) else np.empty(0)
    dt = time.time() - t0
    result = frame.iloc[good].copy()
    result["probability"] = probs
    _write_csv(out / "probabilities.csv", result, ctx)
    if dt > 0:
        logger.info("evaluated %d queries at %.0f queries/s", len(queries), len(queries) / dt)
    if bad_rows:
        err = pd.DataFrame({"row": bad_rows})
        _write_csv(out / "errors.csv", err, ctx)
        print(f"evaluated={len(queries)} malformed={len(bad_rows)}", file=sys.stderr)
        return 2
    print(f"evaluated={len(queries)} rate={len(queries) / dt if dt else float('inf'):.0f}/s")
    return 0


def cmd_replicate_ws(args, ctx: RunContext) -> int:
    out = _out_dir(args)
    params = WsParams()
    report = {"metadata": make_metadata("ws-replication", ctx.root_seed, ctx.config)}
    ref_cache: dict[tuple, float] = {}

    def ref(row):
        key = (float(row[0]), float(row[1]))
        if key not in ref_cache:
            ref_cache[key] = ws_probability(key[0], key[1], params)
        return ref_cache[key]

    tables = {}
    for delta in (0.2, 0.02):
        settings = ctx.derive_settings(delta=delta)
        table = derive_ws_table(settings)
        tables[delta] = table
        cmp_ = compare_to_reference(table, ref, table.points)
        save_table(out / f"table_delta_{delta}.json", table)
        report[f"delta_{delta}"] = {
            "mean_abs_error": cmp_.mean_abs_error,
            "max_abs_error": cmp_.max_abs_error,
        }
        logger.info("delta=%s mean|err|=%.4f max|err|=%.4f", delta,
                    cmp_.mean_abs_error, cmp_.max_abs_error)

    # Curve data: probability vs TTC at three closing speeds.
    ttc_axis = np.arange(0.5, 4.0001, 0.1)
    rows = []
    for dv in (10.0, 20.0, 30.0):
        queries = np.column_stack([np.full_like(ttc_axis, dv), ttc_axis])
        analytic = [ref(q) for q in queries]
        for delta, table in tables.items():
            est = nw_evaluate_batch(table, queries)
            for ttc, a_val, e_val in zip(ttc_axis, analytic, est):
                rows.append({"delta_v": dv, "ttc": ttc, "delta": delta,
                             "analytic": a_val, "estimated": e_val})
    _write_csv(out / "curves.csv", pd.DataFrame(rows), ctx)
    with open(out / "replication.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"mean_abs_error delta=0.2: {report['delta_0.2']['mean_abs_error']:.4f}; "
          f"delta=0.02: {report['delta_0.02']['mean_abs_error']:.4f}")
    return 0


def cmd_benchmark(args, ctx: RunContext) -> int:
    table = load_table(args.table)
    if table.design_points.dim != len(DEFAULT_TRENDS):
        raise CliError(f"trend benchmark requires a {len(DEFAULT_TRENDS)}-input table")
    out = _out_dir(args)
    report = run_trend_benchmark(table)
    meta = make_metadata("trend-benchmark", ctx.root_seed, ctx.config)
    if args.format in ("csv", "both"):
        save_trend_report_csv(out / "trend_report.csv", report, ctx.header_lines())
    if args.format in ("json", "both"):
        save_trend_report_json(out / "trend_report.json", report, meta)
    for label, frac in zip(report.labels, report.correct_sign_fraction):
        print(f"{label}: correct_sign_fraction={frac:.4f}")
    return 0


def cmd_simulate_scenario(args, ctx: RunContext) -> int:
    table = load_table(args.table)
    if args.scenario in FIXTURE_NAMES:
        scenario = load_fixture(args.scenario)
    else:
        path = Path(args.scenario)
        if not path.exists():
            raise CliError(f"scenario not found: {args.scenario}")
        scenario = scenario_from_json(path)
    result = evaluate_scenario(table, scenario)
    out = _out_dir(args)
    frame = pd.DataFrame({k: result[k] for k in
                          ("t", "v_ego", "v_lead", "gap", "p_table", "p_reference")})
    _write_csv(out / f"scenario_{scenario.name}.csv", frame, ctx,
               extra={"scenario": scenario.name, "crashed": result["crashed"]})
    print(f"scenario={scenario.name} crashed={result['crashed']} "
          f"max_p_table={result['p_table'].max():.3f}")
    return 0


def cmd_sample_futures(args, ctx: RunContext) -> int:
    model, _ = load_density_model(args.model)
    sampler = FutureSampler(model)
    rng = np.random.default_rng(ctx.root_seed)
    futures = sampler.draw_futures((args.v_lead, args.a_lead), rng, args.count)
    out = _out_dir(args)
    cols = {f"t_{model.horizon_dt * (k + 1):.1f}s": futures[:, k]
            for k in range(futures.shape[1])}
    _write_csv(out / "future_profiles.csv", pd.DataFrame(cols), ctx,
               extra={"v_lead": args.v_lead, "a_lead": args.a_lead})
    print(f"sampled {args.count} profiles conditioned on "
          f"v_lead={args.v_lead} a_lead={args.a_lead}")
    return 0


# ------------------------------------------------------------------ main ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmkit",
        description="Derive, evaluate, and benchmark probabilistic surrogate "
                    "safety measures from car-following data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("ingest", help="extract situation pairs from trajectories")
    p.add_argument("--trajectories", default=None,
                   help="trajectory CSV (omit to synthesize a fleet from config)")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("derive", help="derive a probability table")
    p.add_argument("--pairs", default=None, help="pairs CSV from ingest")
    p.add_argument("--mode", choices=("ws", "data", "trend"), default=None)
    common(p)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("evaluate", help="evaluate a table on query rows")
    p.add_argument("--table", required=True)
    p.add_argument("--queries", required=True, help="CSV of query rows")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replicate-ws", help="replicate the closed-form measure")
    common(p)
    p.set_defaults(func=cmd_replicate_ws)

    p = sub.add_parser("benchmark", help="risk-trend benchmark of a trend table")
    p.add_argument("--table", required=True)
    common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("simulate-scenario", help="evaluate a table along a scenario")
    p.add_argument("--table", required=True)
    p.add_argument("--scenario", required=True,
                   help=f"scenario JSON path or fixture name {FIXTURE_NAMES}")
    common(p)
    p.set_defaults(func=cmd_simulate_scenario)

    p = sub.add_parser("sample-futures", help="draw leader speed futures")
    p.add_argument("--model", required=True, help="density model .npz")
    p.add_argument("--v-lead", type=float, required=True)
    p.add_argument("--a-lead", type=float, required=True)
    p.add_argument("--count", type=int, default=50)
    common(p)
    p.set_defaults(func=cmd_sample_futures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else int(config.get("root_seed", 0))
        threads = args.threads if args.threads is not None else int(
            config.get("derive", {}).get("threads", 1))
        ctx = RunContext(config=config, root_seed=seed, threads=threads)
        return args.func(args, ctx)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        if getattr(args, "verbose", False):
            raise
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
