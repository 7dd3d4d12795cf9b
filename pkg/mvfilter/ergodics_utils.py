"""
Invariant measure of the frozen equation, the averages hbar and Fbar against it, and the
decay experiments behind the contraction, Wasserstein and averaged-drift bounds.
"""
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.stats import linregress

from .errors import BlowUpError
from .measure_utils import EmpiricalMeasure, second_moment, wasserstein2_1d
from .model_utils import ModelSpec, check_growth
from .noise_utils import IncrementStream, NoisePlan, StreamId, make_grid
from .dynamics_utils import simulate_frozen

MIN_INVARIANT_SAMPLES = 100
BURN_IN_FLOOR = 5.0             # burn_in >= 5 / beta
DEFAULT_BURN_IN = 10.0          # times 1 / beta
DEFAULT_THINNING = 1.0          # times 1 / beta
DEFAULT_INVARIANT_SAMPLES = 4096
DEFAULT_DT = 0.01
SIGNIFICANCE = 10.0             # decay fits use points this many noise floors above zero
HBAR_SE_FACTOR = 2.0
HBAR_BATCHES = 32
HBAR_CACHE_SIZE = 32


@dataclass(frozen=True, eq=False)
class InvariantSample:
    cloud: EmpiricalMeasure
    burn_in: float
    thinning: float
    n_samples: int
    provenance: Tuple[str, int]
    dt: float = DEFAULT_DT
    n_chains: int = 1


@dataclass(frozen=True)
class AverageEstimate:
    value: np.ndarray
    stderr: np.ndarray
    n: int


@dataclass
class DecayCurve:
    times: np.ndarray
    observed: np.ndarray
    bound: np.ndarray
    stderr: np.ndarray
    fitted_exponent: float

    def violations(self, n_se: float = 5.0) -> int:
        '''Grid times where observed > bound + n_se * stderr (with rounding slack).'''
        slack = n_se * self.stderr + 1e-12 * np.maximum(self.bound, 1.0)
        return int(np.sum(self.observed > self.bound + slack))

    def rows(self) -> List[Tuple[float, float, float, float]]:
        return list(zip(self.times.tolist(), self.observed.tolist(), self.bound.tolist(), self.stderr.tolist()))


def fit_decay_exponent(times: np.ndarray, observed: np.ndarray, floor: Optional[np.ndarray] = None) -> float:
    '''Slope of log(observed) against t over points above SIGNIFICANCE * floor; nan when fewer than two survive.'''
    floor = np.zeros_like(observed) if floor is None else np.broadcast_to(floor, observed.shape)
    mask = (observed > 0) & (observed > SIGNIFICANCE * floor)
    if mask.sum() < 2:
        return float('nan')
    return float(linregress(times[mask], np.log(observed[mask])).slope)


# ---------------------------------------------------------------------------------------------
# Invariant measure and averages
# ---------------------------------------------------------------------------------------------

def sample_invariant(model: ModelSpec, burn_in: Optional[float] = None, n_samples: int = DEFAULT_INVARIANT_SAMPLES,
                     thinning: Optional[float] = None, plan: Optional[NoisePlan] = None,
                     dt: float = DEFAULT_DT, n_chains: int = 1) -> InvariantSample:
    """
    nu-hat from a long frozen trajectory: run burn_in time units, then keep one state every
    `thinning` time units. With n_chains > 1 the samples come from that many independent
    trajectories advanced together, each contributing n_samples / n_chains states.
    """
    plan = NoisePlan() if plan is None else plan
    beta = model.dissipativity
    burn_in = DEFAULT_BURN_IN / beta if burn_in is None else burn_in
    thinning = DEFAULT_THINNING / beta if thinning is None else thinning
    if burn_in < BURN_IN_FLOOR / beta:
        raise ValueError(f'burn_in={burn_in} is below the floor 5/beta = {BURN_IN_FLOOR / beta} (beta={beta})')
    if type(n_samples) != int or n_samples < MIN_INVARIANT_SAMPLES:
        raise ValueError(f'n_samples must be an int >= {MIN_INVARIANT_SAMPLES}, received: {n_samples!r}')
    if type(n_chains) != int or n_chains < 1 or n_samples % n_chains:
        raise ValueError(f'n_chains must be a positive int dividing n_samples, received: {n_chains!r}')
    if not 0 < dt <= thinning:
        raise ValueError(f'dt must lie in (0, thinning], received: dt={dt}, thinning={thinning}')

    burn_steps = int(round(burn_in / dt))
    thin_steps = max(1, int(round(thinning / dt)))
    per_chain = n_samples // n_chains

    x = model.sample_initial(plan.generator(StreamId('invariant/initial', 0, 0)), n_chains)
    noise = IncrementStream(plan, 'invariant', 0, n_chains, model.dim_noise_fast, dt)

    def step(x):
        return x + dt * model.drift(x) + model.noise_term(x, noise.next())

    for _ in range(burn_steps):
        x = step(x)
    samples = np.empty((per_chain, n_chains, model.dim_signal))
    for i in range(per_chain):
        for _ in range(thin_steps):
            x = step(x)
        samples[i] = x
    if not np.isfinite(samples).all():
        raise BlowUpError(particle=int(np.argmin(np.isfinite(samples).all(axis=(0, 2)))), time=burn_in + per_chain * thinning, process='frozen')

    return InvariantSample(
        cloud=EmpiricalMeasure.uniform(samples.reshape(n_samples, model.dim_signal)),
        burn_in=burn_in,
        thinning=thin_steps * dt,
        n_samples=n_samples,
        provenance=(model.name, plan.master_seed),
        dt=dt,
        n_chains=n_chains,
    )


_HBAR_CACHE: 'OrderedDict[tuple, AverageEstimate]' = OrderedDict()
_HBAR_LOCK = threading.Lock()


def _cache_key(model: ModelSpec, nu: InvariantSample) -> tuple:
    return (model.name, tuple(sorted(model.params.items())), model.obs, nu.provenance, nu.n_samples, nu.burn_in, nu.thinning, nu.dt, nu.n_chains)


def batch_means_stderr(values: np.ndarray, n_chains: int = 1, n_batches: int = HBAR_BATCHES) -> np.ndarray:
    """
    Standard error of the mean of chain output laid out as (per_chain * n_chains, m), time-major.
    With at least n_batches chains every chain mean is one independent batch; otherwise the time
    axis is cut into n_batches contiguous blocks averaged over all chains.
    """
    per_chain = values.shape[0] // n_chains
    series = values.reshape(per_chain, n_chains, -1)
    if n_chains >= n_batches:
        means = series.mean(axis=0)
    else:
        n_batches = min(n_batches, per_chain)
        usable = per_chain - per_chain % n_batches
        means = series[:usable].reshape(n_batches, usable // n_batches, n_chains, -1).mean(axis=(1, 2))
    return means.std(axis=0, ddof=1) / math.sqrt(means.shape[0])


def compute_hbar(model: ModelSpec, nu: InvariantSample) -> AverageEstimate:
    """
    hbar = int h(x, nu) nu(dx) as the cloud average of h(x_i, nu-hat). The samples are correlated
    along each chain, so the error comes from batch means. h(., nu-hat) reuses the cloud, so for a
    pair interaction the first-order error term doubles: stderr is HBAR_SE_FACTOR times the
    batch-means error. The last HBAR_CACHE_SIZE results are cached per (model, nu-hat) so every
    downstream experiment shares one value.
    """
    key = _cache_key(model, nu)
    with _HBAR_LOCK:
        if key in _HBAR_CACHE:
            _HBAR_CACHE.move_to_end(key)
            return _HBAR_CACHE[key]
    values = model.obs(nu.cloud.points, nu.cloud)
    estimate = AverageEstimate(
        value=values.mean(axis=0),
        stderr=HBAR_SE_FACTOR * batch_means_stderr(values, nu.n_chains),
        n=int(values.shape[0]),
    )
    with _HBAR_LOCK:
        _HBAR_CACHE[key] = estimate
        while len(_HBAR_CACHE) > HBAR_CACHE_SIZE:
            _HBAR_CACHE.popitem(last=False)
    return estimate


def compute_Fbar(F, nu: InvariantSample) -> AverageEstimate:
    '''Fbar = int F(x, nu) nu(dx); F is a TestFunction or a plain callable F(x, mu) -> (K,).'''
    evaluate: Callable = getattr(F, 'evaluate', F)
    values = np.asarray(evaluate(nu.cloud.points, nu.cloud), dtype=float).reshape(-1)
    return AverageEstimate(
        value=np.array([values.mean()]),
        stderr=batch_means_stderr(values.reshape(-1, 1), nu.n_chains),
        n=int(values.size),
    )


# ---------------------------------------------------------------------------------------------
# Decay experiments
# ---------------------------------------------------------------------------------------------

def _eval_indices(n_steps: int, n_eval: int) -> np.ndarray:
    return np.unique(np.linspace(0, n_steps, min(n_eval, n_steps) + 1).round().astype(int))


def contraction_experiment(model: ModelSpec, x1, x2, T: float, dt: float, n_reps: int, plan: NoisePlan) -> DecayCurve:
    """
    Synchronous coupling: paths from x1 and x2 share their Brownian increments. Observed is
    E|X_t^{x1} - X_t^{x2}|^2 against |x1 - x2|^2 e^{-beta t}.
    """
    grid = make_grid(T, dt)
    first = simulate_frozen(model, grid, x1, plan, n_paths=n_reps, role='contraction')
    second = simulate_frozen(model, grid, x2, plan, n_paths=n_reps, role='contraction')
    squared = np.sum((first - second) ** 2, axis=2)
    observed = squared.mean(axis=1)
    stderr = squared.std(axis=1, ddof=1) / math.sqrt(n_reps) if n_reps > 1 else np.zeros_like(observed)
    start_gap = float(np.sum((np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) ** 2))
    bound = start_gap * np.exp(-model.dissipativity * grid.times)
    return DecayCurve(
        times=grid.times,
        observed=observed,
        bound=bound,
        stderr=stderr,
        fitted_exponent=fit_decay_exponent(grid.times, observed),
    )


def _start_cloud(model: ModelSpec, x0, n_reps: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, model.dim_signal), (n_reps, model.dim_signal))


def w2_decay_experiment(model: ModelSpec, x0, T: float, nu: InvariantSample, plan: NoisePlan,
                        n_reps: int = 4000, dt: float = DEFAULT_DT, n_eval: int = 40, n_bootstrap: int = 20) -> DecayCurve:
    """
    W2^2 between the cloud of n_reps frozen paths at time t and nu-hat, against
    2 e^{-beta t} (E|xi|^2 + nu(|.|^2)). The stderr column is the bootstrap standard deviation
    of the W2^2 estimate; the decay fit keeps points well above the bootstrap sampling floor.
    """
    if model.dim_signal != 1:
        raise ValueError(f'w2_decay_experiment needs a 1-D model for exact W2, received dimension {model.dim_signal}')
    start = _start_cloud(model, x0, n_reps)
    grid = make_grid(T, dt)
    paths = simulate_frozen(model, grid, start, plan, n_paths=n_reps, role='w2-decay')
    indices = _eval_indices(grid.n_steps, n_eval)
    rng = plan.generator(StreamId('w2-decay/bootstrap'))

    observed, stderr, floor = [], [], []
    for k in indices:
        cloud = EmpiricalMeasure.uniform(paths[k])
        observed.append(wasserstein2_1d(cloud, nu.cloud) ** 2)
        boot_to_nu, boot_to_self = [], []
        for _ in range(n_bootstrap):
            resampled = EmpiricalMeasure.uniform(paths[k][rng.integers(0, n_reps, n_reps)])
            boot_to_nu.append(wasserstein2_1d(resampled, nu.cloud) ** 2)
            boot_to_self.append(wasserstein2_1d(resampled, cloud) ** 2)
        stderr.append(np.std(boot_to_nu, ddof=1))
        floor.append(np.mean(boot_to_self))

    times = grid.times[indices]
    observed, stderr, floor = np.array(observed), np.array(stderr), np.array(floor)
    start_moment = float(np.mean(np.sum(start ** 2, axis=1)))
    bound = 2.0 * np.exp(-model.dissipativity * times) * (start_moment + second_moment(nu.cloud))
    return DecayCurve(times=times, observed=observed, bound=bound, stderr=stderr,
                      fitted_exponent=fit_decay_exponent(times, observed, floor))


def hbar_decay_experiment(model: ModelSpec, x0, T: float, nu: InvariantSample, plan: NoisePlan,
                          n_reps: int = 4000, dt: float = DEFAULT_DT, n_eval: int = 40) -> DecayCurve:
    """
    |mean_r h(X_t^r, nu-hat) - hbar|^2 against 2 L2 e^{-beta t} (E|xi|^2 + nu(|.|^2)).
    stderr is the delta-method error of the squared gap.
    """
    hbar = compute_hbar(model, nu)
    start = _start_cloud(model, x0, n_reps)
    grid = make_grid(T, dt)
    paths = simulate_frozen(model, grid, start, plan, n_paths=n_reps, role='hbar-decay')
    indices = _eval_indices(grid.n_steps, n_eval)

    observed, stderr, floor = [], [], []
    for k in indices:
        values = model.obs(paths[k], nu.cloud)
        gap = values.mean(axis=0) - hbar.value
        se_mean = values.std(axis=0, ddof=1) / math.sqrt(n_reps)
        observed.append(float(np.sum(gap ** 2)))
        stderr.append(float(np.sum(2.0 * np.abs(gap) * se_mean + se_mean ** 2)))
        floor.append(float(np.sum(se_mean ** 2 + hbar.stderr ** 2)))

    times = grid.times[indices]
    observed, stderr, floor = np.array(observed), np.array(stderr), np.array(floor)
    start_moment = float(np.mean(np.sum(start ** 2, axis=1)))
    bound = 2.0 * model.lip_h * np.exp(-model.dissipativity * times) * (start_moment + second_moment(nu.cloud))
    return DecayCurve(times=times, observed=observed, bound=bound, stderr=stderr,
                      fitted_exponent=fit_decay_exponent(times, observed, floor))


def moment_bound_experiment(model: ModelSpec, x0, T: float, dt: float, n_reps: int, plan: NoisePlan,
                            growth_constant: Optional[float] = None, n_eval: int = 40) -> DecayCurve:
    """
    E|X_t|^2 against E|xi|^2 e^{-alpha t} + C / alpha. C defaults to the empirical constant of
    the growth check. The fitted exponent describes the relaxation of E|X_t|^2 toward its limit.
    """
    if model.alpha <= 0:
        raise ValueError(f'the second-moment bound needs beta > 2 L1, received beta={model.dissipativity}, L1={model.lip_b_sigma}')
    if growth_constant is None:
        growth_constant = check_growth(model, 10_000, 10.0, plan.master_seed).empirical_constant
    start = _start_cloud(model, x0, n_reps)
    grid = make_grid(T, dt)
    paths = simulate_frozen(model, grid, start, plan, n_paths=n_reps, role='moment-bound')
    indices = _eval_indices(grid.n_steps, n_eval)
    squared = np.sum(paths[indices] ** 2, axis=2)
    observed = squared.mean(axis=1)
    stderr = squared.std(axis=1, ddof=1) / math.sqrt(n_reps)
    times = grid.times[indices]
    start_moment = float(np.mean(np.sum(start ** 2, axis=1)))
    bound = start_moment * np.exp(-model.alpha * times) + growth_constant / model.alpha
    excess = np.abs(observed - observed[-1])
    return DecayCurve(times=times, observed=observed, bound=bound, stderr=stderr,
                      fitted_exponent=fit_decay_exponent(times, excess, stderr))
