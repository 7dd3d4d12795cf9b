"""
Simulation and verification utilities for multiscale McKean-Vlasov signal/observation systems.
Provides reusable components for Models, Noise streams, Empirical measures, Dynamics, Ergodic averages, Averaging, Filtering and Reporting, with state management via a Context Object.
"""

# Context Object
from .context import RunContext, VERSION as __version__
from .errors import ConfigError, NumericalAbortError, BlowUpError, WeightUnderflowError
from .model_utils import ModelSpec, HypothesisReport, example_model, linear_ou_model, silence_observations, register_model, get_model, check_lipschitz, check_dissipativity, check_obs_bound, check_growth, check_hypotheses
from .noise_utils import TimeGrid, make_grid, StreamId, NoisePlan, BrownianPath, sample_brownian, IncrementStream
from .measure_utils import EmpiricalMeasure, gaussian_quantile_cloud, second_moment, wasserstein2, wasserstein2_1d, wasserstein2_assignment, paired_upper_bound_check
from .dynamics_utils import Ensemble, SlowPath, simulate_fast_ensemble, simulate_observation, simulate_averaged, simulate_frozen, ou_law_oracle, ensemble_statistics, time_rescaling_check
from .ergodics_utils import InvariantSample, DecayCurve, sample_invariant, compute_hbar, compute_Fbar, contraction_experiment, w2_decay_experiment, hbar_decay_experiment, moment_bound_experiment
from .averaging_utils import RateReport, sup_error_one_path, fit_rate, rate_experiment
from .filtering_utils import TestFunction, FilterOutput, ExperimentReport, ks_log_weight, particle_filter, averaged_filter, filter_convergence_experiment, martingale_diagnostic, inverse_moment_diagnostic, systematic_resample, effective_sample_size
from .logger_utils import initialize_logger
from .worker_utils import initialize_executor, close_executor, map_ordered
