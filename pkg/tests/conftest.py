import pytest

from ssmkit.pipeline import DeriveSettings, derive_ws_table, fit_future_density
from ssmkit.probability import EstimatorConfig
from ssmkit.trajectory import (SyntheticFleetConfig, build_situation_pairs,
                               extract_interactions, pairs_to_arrays,
                               synthesize_fleet)


@pytest.fixture(scope="session")
def small_fleet_tracks():
    cfg = SyntheticFleetConfig(vehicle_count=8, duration=200.0, seed=7)
    return synthesize_fleet(cfg)


@pytest.fixture(scope="session")
def small_pairs(small_fleet_tracks):
    pairs = []
    for ep in extract_interactions(small_fleet_tracks):
        pairs.extend(build_situation_pairs(ep))
    assert len(pairs) > 300
    return pairs_to_arrays(pairs)


@pytest.fixture(scope="session")
def density_model(small_pairs):
    x, y = small_pairs
    return fit_future_density(x, y, d=4)


@pytest.fixture(scope="session")
def ws_table():
    settings = DeriveSettings(root_seed=42, estimator=EstimatorConfig(delta=0.02))
    return derive_ws_table(settings)
