"""End-to-end derivation of probability tables.

Three modes cover the case studies:

* ``ws``    - constant-speed leader, react-then-brake ego, (delta_v, TTC) grid;
* ``data``  - leader futures sampled from a fitted density model, IDM+ ego,
              design points covering the observed initial situations;
* ``trend`` - like ``data`` but over [delta_v, v_ego, t_react, gap, madr]
              inputs with the driver response fixed per point and the leader
              acceleration pinned at zero (for the risk-trend benchmark).

All randomness is derived from one root seed and the bit pattern of the
design point, so tables are reproducible regardless of evaluation order or
threading.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__, kernels
from .density import (BandwidthMatrix, ConstrainedSampler, KdeModel, ReducedBasis,
                      Standardization, fit_svd_basis, silverman_bandwidth)
from .probability import EstimatorConfig, estimate_probability
from .regression import (DesignPointSet, SsmTable, build_ssm_table,
                         select_design_points_cover, select_design_points_grid)
from .reference import WsParams
from .simulation import IdmPlusParams, sample_madr, sample_reaction_time

DENSITY_FORMAT = "ssm-density"
DENSITY_VERSION = 1

WS_GRID = ((0.0, 40.0, 2.0), (0.5, 4.0, 0.1))
DATA_COVER_WEIGHTS = (0.25, 4.0, 0.25, 0.25)
TREND_GRID = ((0.0, 20.0, 20.0 / 9), (10.0, 30.0, 20.0 / 9), (0.5, 1.5, 1.0 / 9),
              (5.0, 30.0, 25.0 / 9), (4.0, 10.0, 6.0 / 9))


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def make_metadata(mode: str, seed: int, config: dict | None = None) -> dict:
    return {
        "tool_version": __version__,
        "mode": mode,
        "seed": int(seed),
        "config_hash": config_hash(config or {}),
    }


def point_rng(root_seed: int, x: np.ndarray) -> np.random.Generator:
    """Generator keyed on the root seed and the point's bit pattern."""
    bits = np.ascontiguousarray(np.asarray(x, dtype=float)).view(np.uint64)
    return np.random.default_rng([np.uint64(root_seed)] + [int(b) for b in bits])


@dataclass(frozen=True)
class FutureDensityModel:
    """Fitted predictor of leader speed futures given (v_lead, a_lead)."""

    basis: ReducedBasis
    standardization: Standardization
    kde: KdeModel
    horizon_dt: float = 0.1
    cond_indices: tuple = (0, 1)


def fit_future_density(x: np.ndarray, y: np.ndarray, d: int = 4,
                       horizon_dt: float = 0.1,
                       cond_indices: tuple = (0, 1)) -> FutureDensityModel:
    """Reduce (conditioning slice of x, y) with the truncated SVD, z-score the
    reduced coordinates, and fit the Gaussian KDE with the rule-of-thumb
    bandwidth."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    basis, coords = fit_svd_basis(x[:, list(cond_indices)], y, d)
    standardization = Standardization.fit(coords)
    z = standardization.apply(coords)
    kde = KdeModel(samples=z, bandwidth=silverman_bandwidth(z))
    return FutureDensityModel(basis=basis, standardization=standardization,
                              kde=kde, horizon_dt=horizon_dt,
                              cond_indices=tuple(cond_indices))


class FutureSampler:
    """Caches the constrained sampler per conditioning value."""

    def __init__(self, model: FutureDensityModel):
        self.model = model
        self._cache: dict[tuple, ConstrainedSampler] = {}

    def sampler_for(self, conditioning) -> ConstrainedSampler:
        key = tuple(float(c) for c in conditioning)
        sampler = self._cache.get(key)
        if sampler is None:
            a_mat, b_vec = self.model.basis.constraint(key)
            sampler = ConstrainedSampler(self.model.kde, a_mat, b_vec,
                                         self.model.standardization)
            self._cache[key] = sampler
        return sampler

    def draw_futures(self, conditioning, rng: np.random.Generator, n: int) -> np.ndarray:
        coords = self.sampler_for(conditioning).draw_coords(rng, n)
        return np.maximum(self.model.basis.future_from_coords(coords), 0.0)


def save_density_model(path, model: FutureDensityModel, metadata: dict | None = None) -> None:
    meta = {"format": DENSITY_FORMAT, "version": DENSITY_VERSION, **(metadata or {})}
    bw = model.kde.bandwidth
    np.savez(
        path,
        meta=json.dumps(meta),
        kde_samples=model.kde.samples,
        bandwidth_matrix=bw.matrix,
        bandwidth_h=np.asarray(bw.h if bw.h is not None else np.nan),
        std_mean=model.standardization.mean,
        std_std=model.standardization.std,
        mean_x=model.basis.mean_x,
        mean_y=model.basis.mean_y,
        u_top=model.basis.u_top,
        u_bottom=model.basis.u_bottom,
        singular_values=model.basis.singular_values,
        horizon_dt=np.asarray(model.horizon_dt),
        cond_indices=np.asarray(model.cond_indices, dtype=np.int64),
    )


def load_density_model(path) -> tuple[FutureDensityModel, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != DENSITY_FORMAT:
            raise ValueError(f"not a density model file: {path}")
        if meta.get("version") != DENSITY_VERSION:
            raise ValueError(f"unsupported density model version {meta.get('version')}")
        h = float(data["bandwidth_h"])
        bw = BandwidthMatrix(data["bandwidth_matrix"], h=None if np.isnan(h) else h)
        basis = ReducedBasis(
            mean_x=data["mean_x"], mean_y=data["mean_y"], u_top=data["u_top"],
            u_bottom=data["u_bottom"], singular_values=data["singular_values"],
            d=int(data["singular_values"].shape[0]),
        )
        model = FutureDensityModel(
            basis=basis,
            standardization=Standardization(mean=data["std_mean"], std=data["std_std"]),
            kde=KdeModel(samples=data["kde_samples"], bandwidth=bw),
            horizon_dt=float(data["horizon_dt"]),
            cond_indices=tuple(int(i) for i in data["cond_indices"]),
        )
    return model, meta


def ws_point_runner(x: np.ndarray, ws_params: WsParams, dt: float):
    """Batch runner for one (delta_v, ttc) design point."""
    delta_v, ttc = float(x[0]), float(x[1])

    def run(rng: np.random.Generator, n: int) -> np.ndarray:
        if delta_v <= 0:
            # Not closing: no crash is possible; report unit clearance.
            gap0 = delta_v * ttc
            return np.full(n, gap0 if gap0 > 0 else 1.0)
        t_react = sample_reaction_time(rng, ws_params, size=n)
        madr = sample_madr(rng, ws_params, size=n)
        return kernels.simulate_ws_batch(delta_v, ttc, t_react, madr, dt)

    return run


def data_point_runner(x: np.ndarray, sampler: FutureSampler, idm: IdmPlusParams,
                      ws_params: WsParams, dt: float, t_cap: float):
    """Batch runner for one [v_lead, a_lead, v_ego, ln_gap] design point."""
    x = np.asarray(x, dtype=float)
    conditioning = tuple(x[list(sampler.model.cond_indices)])
    v_ego0, gap0 = float(x[2]), float(np.exp(x[3]))

    def run(rng: np.random.Generator, n: int) -> np.ndarray:
        futures = sampler.draw_futures(conditioning, rng, n)
        knots = np.column_stack([np.full(n, x[0]), futures])
        t_react = sample_reaction_time(rng, ws_params, size=n)
        madr = sample_madr(rng, ws_params, size=n)
        return kernels.simulate_idm_batch(knots, sampler.model.horizon_dt, v_ego0,
                                          gap0, t_react, madr, idm.as_tuple(), dt, t_cap)

    return run


def trend_point_runner(x: np.ndarray, sampler: FutureSampler, idm: IdmPlusParams,
                       dt: float, t_cap: float):
    """Batch runner for one [delta_v, v_ego, t_react, gap, madr] design point:
    the driver response is an input, only the leader future is random."""
    x = np.asarray(x, dtype=float)
    delta_v, v_ego0, t_react, gap0, madr = (float(v) for v in x)
    conditioning = (v_ego0 - delta_v, 0.0)

    def run(rng: np.random.Generator, n: int) -> np.ndarray:
        futures = sampler.draw_futures(conditioning, rng, n)
        knots = np.column_stack([np.full(n, conditioning[0]), futures])
        return kernels.simulate_idm_batch(knots, sampler.model.horizon_dt, v_ego0,
                                          gap0, np.full(n, t_react), np.full(n, madr),
                                          idm.as_tuple(), dt, t_cap)

    return run


@dataclass(frozen=True)
class DeriveSettings:
    root_seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    ws_params: WsParams = field(default_factory=WsParams)
    idm: IdmPlusParams = field(default_factory=IdmPlusParams)
    dt: float = 0.1
    t_cap: float = 60.0
    threads: int = 1


def _build(points: DesignPointSet, make_runner, settings: DeriveSettings,
           mode: str, nw_bandwidth: BandwidthMatrix | None = None,
           extra_meta: dict | None = None) -> SsmTable:
    def estimator(x: np.ndarray):
        rng = point_rng(settings.root_seed, x)
        return estimate_probability(make_runner(x), settings.estimator, rng)

    meta = make_metadata(mode, settings.root_seed, extra_meta)
    progress = max(points.count // 10, 1) if points.count >= 1000 else 0
    return build_ssm_table(points, estimator, nw_bandwidth=nw_bandwidth,
                           metadata=meta, threads=settings.threads,
                           progress_every=progress)


def derive_ws_table(settings: DeriveSettings, grid=WS_GRID,
                    nw_bandwidth: BandwidthMatrix | None = None) -> SsmTable:
    points = select_design_points_grid(grid)
    return _build(points, lambda x: ws_point_runner(x, settings.ws_params, settings.dt),
                  settings, "ws", nw_bandwidth=nw_bandwidth,
                  extra_meta={"grid": [list(g) for g in grid]})


def derive_data_table(x: np.ndarray, y: np.ndarray, settings: DeriveSettings,
                      d: int = 4, cover_weights=DATA_COVER_WEIGHTS,
                      model: FutureDensityModel | None = None,
                      nw_bandwidth: BandwidthMatrix | None = None,
                      ) -> tuple[SsmTable, FutureDensityModel]:
    if model is None:
        model = fit_future_density(x, y, d=d)
    sampler = FutureSampler(model)
    points = select_design_points_cover(x, cover_weights)
    table = _build(points,
                   lambda p: data_point_runner(p, sampler, settings.idm,
                                               settings.ws_params, settings.dt,
                                               settings.t_cap),
                   settings, "data", nw_bandwidth=nw_bandwidth,
                   extra_meta={"d": d, "cover_weights": list(cover_weights)})
    return table, model


def derive_trend_table(model: FutureDensityModel, settings: DeriveSettings,
                       grid=TREND_GRID,
                       nw_bandwidth: BandwidthMatrix | None = None) -> SsmTable:
    sampler = FutureSampler(model)
    points = select_design_points_grid(grid)
    return _build(points,
                  lambda p: trend_point_runner(p, sampler, settings.idm,
                                               settings.dt, settings.t_cap),
                  settings, "trend", nw_bandwidth=nw_bandwidth,
                  extra_meta={"grid": [list(g) for g in grid]})
