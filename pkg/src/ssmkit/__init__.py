"""ssmkit: data-driven probabilistic surrogate safety measures.

Derives crash-probability measures for car-following conflicts in four
steps: parameterize initial/future situations from trajectory data, fit a
conditional density of the futures, estimate event probabilities by
adaptive Monte Carlo simulation, and tabulate them behind a kernel
regression for real-time lookup.
"""

__version__ = "0.1.0"

from .density import (BandwidthMatrix, ConstrainedSampler, KdeModel, KdeSupportError,
                      ReducedBasis, Standardization, fit_svd_basis, kde_density,
                      kde_sample, kde_sample_conditional, sample_future_given_initial,
                      silverman_bandwidth)
from .probability import (EstimatorConfig, ProbabilityEstimate, confidence_interval,
                          crash_mass_from_results, estimate_prob_counting,
                          estimate_prob_smoothed, estimate_probability, outcome_runner)
from .reference import WsParams, t_max_react, thw, ttc, ws_probability
from .regression import (DesignPointSet, SsmTable, build_ssm_table, load_table,
                         nw_evaluate, nw_evaluate_batch, nw_gradient,
                         nw_gradient_batch, save_table, select_design_points_cover,
                         select_design_points_grid)
from .simulation import (EgoResponseDraw, IdmPlusParams, ScenarioState,
                         SimulationOutcome, idm_plus_accel, sample_madr,
                         sample_reaction_time, simulate_longitudinal, simulate_ws)
from .trajectory import (ColumnMapping, InteractionEpisode, SituationPair,
                         SyntheticFleetConfig, VehicleTrack, build_situation_pairs,
                         extract_interactions, load_trajectories, pairs_to_arrays,
                         synthesize_fleet)
