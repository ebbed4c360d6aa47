"""Structural Bayesian learning model of tool adoption.

Library + CLI for simulating adoption panels, estimating the model by
maximum simulated likelihood, and running belief-trajectory policy
simulations (belief traps and training counterfactuals).
"""

__version__ = "0.1.0"

from .core import (
    Belief,
    FREE_PARAM_NAMES,
    LatentClass,
    ModelParams,
    UserProfile,
    choice_probability,
    class2_probability,
    day_log_likelihood,
    initial_belief,
    representative_utility,
    signal_variance,
    update_belief,
)
from .dgp import (
    CountProcess,
    Dataset,
    DayObservation,
    PopulationSpec,
    ProfileSampler,
    UserGroundTruth,
    UserPanel,
    draw_counts,
    simulate_dataset,
    simulate_user_panel,
    user_stream,
)
from .likelihood import (
    CrnLayer,
    CrnStore,
    SimulatedLikelihood,
    build_crn,
    conditional_path_loglik,
    total_simulated_loglik,
    user_simulated_loglik,
)
from .estimation import (
    EstimationResult,
    FitOptions,
    RecoveryConfig,
    RecoveryReport,
    StdErrorResult,
    fd_hessian,
    fit_msl,
    monte_carlo_recovery,
    se_from_hessian,
    standard_errors,
)
from .policy import (
    Scenario,
    SimConfig,
    Trajectory,
    TrapEstimate,
    apply_training,
    compare_profiles,
    fast_learner_profile,
    is_trapped,
    simulate_trajectory,
    slow_learner_profile,
    trajectory_stream,
    trap_comparison_scenarios,
    trap_probability,
)
from .io import load_panel, read_params, table4_params, write_params

__all__ = [name for name in dir() if not name.startswith("_")]
