"""Spectator-qubit mitigation of random telegraph dephasing.

Map-based Bayesian tracking of a two-state telegraph process with an
adaptively measured spectator qubit, exact path sums for the resulting
data-qubit coherence, closed-form rate predictions and a trajectory-level
Monte-Carlo oracle.
"""

from .rtp import (
    AsymptoticRegimeWarning,
    RtpParams,
    RtpTrajectory,
    accumulated_noise,
    generator,
    propagate_probs,
    sample_intervals,
    sample_trajectory,
    steady_state,
    transition_matrix,
)
from .maps import (
    Eigenpair,
    MeasurementSetting,
    combined_reset_map,
    dominant_eigenpair,
    f_map,
    f_map_eps,
    h_map,
)
from .bayes import (
    CoherenceVector,
    Likelihood,
    SufficientStats,
    likelihood,
    moaaar_next,
    optimal_correction,
    slope_coefficients,
    sufficient_stats,
    update,
)
from .analytics import (
    H_STAR,
    THETA_STAR,
    BeforeTimeDistribution,
    DeadTimeThresholds,
    before_time_density,
    before_time_moments,
    dead_time_strategy,
    dead_time_thresholds,
    fit_epsilon_relation,
    h_theta,
    minimize_h_theta,
    rate_delta_kappa,
    rate_delta_theta,
    rate_ideal,
    rate_nocontrol,
    rate_reset,
    rate_reset_eigen,
    scale_factor,
    table1_bounds,
)
from .sop import (
    ImperfectionConfig,
    MapSet,
    PathLimitError,
    PruningWarning,
    RateEstimate,
    SopResult,
    build_map_sets,
    dead_time_rate,
    enumerate_paths,
    extract_rate,
    mc_coherence,
    sop_coherence,
    sop_rate,
)
from .oracle import RunRecord, detection_delays, false_pair_stats, run_ensemble, simulate_run

__version__ = "0.1.0"
