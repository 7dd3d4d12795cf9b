import os
from datetime import datetime, timezone

from typing import TYPE_CHECKING, List, Optional
from .errors import ConfigError
if TYPE_CHECKING:
    from concurrent.futures import ThreadPoolExecutor
    from .logger_utils import ExperimentLogger
    from .noise_utils import NoisePlan


VERSION = '0.1.0'
COMMANDS = ('check-hypotheses', 'simulate', 'ergodics', 'averaging-rate', 'filter-convergence', 'martingale', 'inverse-moment')
MAX_KAPPA = 0.05



class RunContext():
    '''
    Holds everything one mvfilter run needs: the resolved configuration, the logger, the worker pool and the noise plan.
    Any function that receives this context gets easy access to all variables declared/initialized within this object.
    '''

    def __init__(self):
        # Configuration
        self.command:                        str                     = None
        self.model_name:                     str                     = None
        self.sigma:                          float                   = 1.0
        self.x0:                             float                   = 0.0
        self.T:                              float                   = 1.0
        self.dt_obs:                         Optional[float]         = None     # None means 1e-3 * T.
        self.dt:                             float                   = 1e-3
        self.kappa:                          float                   = 0.01
        self.eps_grid:                       List[float]             = None
        self.particles:                      int                     = None
        self.law_particles:                  int                     = 1000
        self.reps:                           int                     = 200
        self.seed:                           int                     = 0
        self.t_eval:                         Optional[float]         = None     # None means T.
        self.test_function:                  str                     = 'F1'
        self.output_path:                    str                     = None
        self.threads:                        int                     = None
        self.burn_in:                        Optional[float]         = None     # None means 10 / beta.
        self.thinning:                       Optional[float]         = None     # None means 1 / beta.
        self.invariant_samples:              int                     = None
        self.r:                              float                   = 2.0
        self.resample:                       bool                    = False
        self.h_zero:                         bool                    = False
        self.n_pairs:                        int                     = 10_000
        self.radius:                         float                   = 5.0

        # Services
        self.logger:                         ExperimentLogger        = None
        self.executor:                       ThreadPoolExecutor      = None
        self.plan:                           NoisePlan               = None

        # Misc
        self.run_start_time:                 datetime                = datetime.now(timezone.utc)
        self.exit_code:                      int                     = 0


    @property
    def coarse_step(self) -> float:
        return self.dt_obs if self.dt_obs else 1e-3 * self.T


    def as_dict(self) -> dict:
        '''Configuration values only, suitable for the metadata sidecar.'''
        keys = [
            'command', 'model_name', 'sigma', 'x0', 'T', 'dt_obs', 'dt', 'kappa', 'eps_grid', 'particles',
            'law_particles', 'reps', 'seed', 't_eval', 'test_function', 'output_path', 'threads', 'burn_in',
            'thinning', 'invariant_samples', 'r', 'resample', 'h_zero', 'n_pairs', 'radius',
        ]
        return {key: getattr(self, key) for key in keys}


    def confirm_all_mandatory_fields_are_initialized(self):
        '''Raises ConfigError naming the first missing or out-of-range configuration variable.'''
        if not self.command:
            raise ConfigError('command', "missing mandatory context variable")
        if self.command not in COMMANDS:
            raise ConfigError('command', f"unknown command {self.command!r}, expected one of {', '.join(COMMANDS)}")
        if not self.model_name:
            raise ConfigError('model', "missing mandatory context variable")
        if not self.sigma or self.sigma <= 0:
            raise ConfigError('sigma', f"must be > 0, received: {self.sigma}")
        if not self.T or self.T <= 0:
            raise ConfigError('T', f"must be > 0, received: {self.T}")
        if self.dt_obs is not None and not 0 < self.dt_obs <= self.T:
            raise ConfigError('dt_obs', f"must lie in (0, T], received: {self.dt_obs}")
        if not self.dt or not 0 < self.dt <= self.T:
            raise ConfigError('dt', f"must lie in (0, T], received: {self.dt}")
        if not self.kappa or not 0 < self.kappa <= MAX_KAPPA:
            raise ConfigError('kappa', f"must lie in (0, {MAX_KAPPA}], received: {self.kappa}")
        if self.eps_grid is not None:
            if any(not 0 < eps <= 1 for eps in self.eps_grid):
                raise ConfigError('eps', f"every epsilon must lie in (0, 1], received: {self.eps_grid}")
            if any(a <= b for a, b in zip(self.eps_grid, self.eps_grid[1:])):
                raise ConfigError('eps', f"epsilon grid must be strictly decreasing, received: {self.eps_grid}")
        if self.particles is not None and self.particles < 2:
            raise ConfigError('particles', f"must be >= 2, received: {self.particles}")
        if self.law_particles < 2:
            raise ConfigError('law_particles', f"must be >= 2, received: {self.law_particles}")
        if self.reps < 1:
            raise ConfigError('reps', f"must be >= 1, received: {self.reps}")
        if self.seed < 0:
            raise ConfigError('seed', f"must be a non-negative integer, received: {self.seed}")
        if self.t_eval is not None and not 0 < self.t_eval <= self.T:
            raise ConfigError('t_eval', f"must lie in (0, T], received: {self.t_eval}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError('threads', f"must be >= 1, received: {self.threads}")
        if self.burn_in is not None and self.burn_in <= 0:
            raise ConfigError('burn_in', f"must be > 0, received: {self.burn_in}")
        if self.thinning is not None and self.thinning <= 0:
            raise ConfigError('thinning', f"must be > 0, received: {self.thinning}")
        if self.invariant_samples is not None and self.invariant_samples < 100:
            raise ConfigError('invariant_samples', f"must be >= 100, received: {self.invariant_samples}")
        if self.r <= 1:
            raise ConfigError('r', f"must be > 1, received: {self.r}")
        if self.n_pairs < 1:
            raise ConfigError('n_pairs', f"must be >= 1, received: {self.n_pairs}")
        if self.radius <= 0:
            raise ConfigError('radius', f"must be > 0, received: {self.radius}")


def default_threads() -> int:
    '''MVFILTER_THREADS if set, otherwise the available parallelism.'''
    env_value = os.getenv('MVFILTER_THREADS')
    if env_value:
        try:
            threads = int(env_value)
        except ValueError:
            raise ConfigError('threads', f"MVFILTER_THREADS must be an integer, received: {env_value!r}")
        if threads < 1:
            raise ConfigError('threads', f"MVFILTER_THREADS must be >= 1, received: {threads}")
        return threads
    return os.cpu_count() or 1
