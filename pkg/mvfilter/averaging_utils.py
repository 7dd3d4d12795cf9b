"""
Averaging-principle experiment: E sup_t |Y^eps_t - Ybar_t|^2 over an epsilon grid and the
log-log fit of its rate.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from .context import RunContext
from .dynamics_utils import DEFAULT_KAPPA, simulate_fast_ensemble
from .ergodics_utils import compute_hbar, sample_invariant
from .model_utils import ModelSpec
from .noise_utils import NoisePlan, TimeGrid, make_grid
from .worker_utils import map_ordered

MIN_RATE_POINTS = 4
MIN_FIT_POINTS = 3
FLOOR_MULTIPLE = 5.0
RATE_INVARIANT_SAMPLES = 65536
RATE_INVARIANT_CHAINS = 64


@dataclass
class RateReport:
    eps_grid: np.ndarray
    mean_sq_sup_error: np.ndarray
    stderr: np.ndarray
    fitted_slope: float
    n_reps: int
    hbar: np.ndarray
    floor: float                     # particle and hbar error floor below which points are left out of the fit
    used_in_fit: np.ndarray          # bool mask over eps_grid
    bound: float                     # pathwise bound (2 |h|_inf T)^2
    bound_violations: int = 0

    def monotone_violations(self, n_se: float = 2.0) -> int:
        '''Consecutive pairs where the error grows along the decreasing epsilon grid by more than n_se stderr.'''
        growth = np.diff(self.mean_sq_sup_error)
        slack = n_se * np.sqrt(self.stderr[1:] ** 2 + self.stderr[:-1] ** 2)
        return int(np.sum(growth > slack))

    def rows(self) -> List[Tuple[float, float, float, int]]:
        return [(float(e), float(m), float(s), self.n_reps) for e, m, s in zip(self.eps_grid, self.mean_sq_sup_error, self.stderr)]


def sup_error_one_path(model: ModelSpec, epsilon: float, T: float, grid_obs: TimeGrid, M: int, hbar,
                       plan: NoisePlan, rep: int, kappa: float = DEFAULT_KAPPA) -> float:
    """
    max_k |Y^eps_{t_k} - Ybar_{t_k}|^2 for one replication. Y and Ybar are driven by the same W,
    so their difference is the cumulative drift mismatch int_0^t (h(X_s, mu_s) - hbar) ds of the
    designated particle 0; W cancels identically and is never drawn.
    """
    hbar = np.atleast_1d(np.asarray(hbar, dtype=float))
    if abs(grid_obs.T - T) > 1e-12 * T:
        raise ValueError(f'grid_obs must end at T={T}, received: {grid_obs.T}')
    ensemble = simulate_fast_ensemble(model, epsilon, grid_obs, M, kappa, plan, replication=rep,
                                      track=(0,), role='averaging/signal', drift_offset=hbar)
    mismatch = np.cumsum(ensemble.drift_integrals[:, 0, :], axis=0)
    return float(np.max(np.sum(mismatch ** 2, axis=1), initial=0.0))


def fit_rate(eps_grid: Sequence[float], errors: Sequence[float]) -> float:
    '''Least-squares slope of log(error) on log(epsilon).'''
    eps_grid = np.asarray(eps_grid, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if eps_grid.shape != errors.shape or eps_grid.size < 2:
        raise ValueError(f'need matching grids of at least 2 points, received {eps_grid.size} and {errors.size}')
    if np.any(errors <= 0) or np.any(eps_grid <= 0):
        raise ValueError(f'errors and epsilons must be > 0 for a log-log fit, received: {errors.tolist()}')
    return float(linregress(np.log(eps_grid), np.log(errors)).slope)


def check_eps_grid(eps_grid: Sequence[float], min_points: int) -> np.ndarray:
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_grid.ndim != 1 or eps_grid.size < min_points:
        raise ValueError(f'need at least {min_points} epsilon values, received: {eps_grid.tolist()}')
    if np.any(eps_grid <= 0) or np.any(eps_grid >= 1) or np.any(np.diff(eps_grid) >= 0):
        raise ValueError(f'epsilon grid must be strictly decreasing inside (0, 1), received: {eps_grid.tolist()}')
    return eps_grid


def rate_experiment(model: ModelSpec, eps_grid: Sequence[float], T: float, M: int, n_reps: int, plan: NoisePlan,
                    hbar=None, hbar_se: float = 0.0, dt_obs: Optional[float] = None, kappa: float = DEFAULT_KAPPA,
                    context: Optional[RunContext] = None) -> RateReport:
    """
    Mean of sup_error_one_path over n_reps replications for every epsilon, and the log-log slope.
    Replication r uses the same signal streams at every epsilon. Points whose error does not
    clear FLOOR_MULTIPLE times the error floor (2 |h| T / M)^2 + (hbar_se T)^2 are left out of the
    fit; when fewer than MIN_FIT_POINTS remain, all points are used.
    """
    eps_grid = check_eps_grid(eps_grid, MIN_RATE_POINTS)
    if type(n_reps) != int or n_reps < 2:
        raise ValueError(f'n_reps must be an int >= 2, received: {n_reps!r}')
    if hbar is None:
        nu = sample_invariant(model, n_samples=RATE_INVARIANT_SAMPLES, plan=plan, n_chains=RATE_INVARIANT_CHAINS)
        estimate = compute_hbar(model, nu)
        hbar, hbar_se = estimate.value, float(np.linalg.norm(estimate.stderr))
    hbar = np.atleast_1d(np.asarray(hbar, dtype=float))

    grid_obs = make_grid(T, dt_obs if dt_obs else 1e-3 * T)
    jobs = [(float(eps), rep) for eps in eps_grid for rep in range(n_reps)]

    def run(job):
        eps, rep = job
        return sup_error_one_path(model, eps, T, grid_obs, M, hbar, plan, rep, kappa)

    errors = np.array(map_ordered(context, run, jobs)).reshape(eps_grid.size, n_reps)
    means = errors.mean(axis=1)
    stderr = errors.std(axis=1, ddof=1) / math.sqrt(n_reps)

    bound = (2.0 * model.obs_bound * T) ** 2
    floor = (2.0 * model.obs_bound * T / M) ** 2 + (hbar_se * T) ** 2
    used = means > FLOOR_MULTIPLE * floor
    if used.sum() < MIN_FIT_POINTS:
        if context is not None and context.logger:
            context.logger.log_info(f'only {int(used.sum())} epsilon points clear the error floor {floor:.3g}; fitting all points')
        used = np.ones_like(used)

    return RateReport(
        eps_grid=eps_grid,
        mean_sq_sup_error=means,
        stderr=stderr,
        fitted_slope=fit_rate(eps_grid[used], means[used]),
        n_reps=n_reps,
        hbar=hbar,
        floor=floor,
        used_in_fit=used,
        bound=bound,
        bound_violations=int(np.sum(errors > bound * (1 + 1e-12))),
    )
