"""
Kallianpur-Striebel particle filter for pi^eps_t(F), the averaged filter and the experiments
built on them: the limit as eps -> 0, the exponential-martingale check and the inverse moment
of the normalizer.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .context import RunContext
from .dynamics_utils import DEFAULT_KAPPA, FastStepper, SlowPath, simulate_fast_ensemble, simulate_observation
from .errors import WeightUnderflowError
from .averaging_utils import check_eps_grid, fit_rate
from .ergodics_utils import compute_Fbar, sample_invariant
from .measure_utils import EmpiricalMeasure, second_moment
from .model_utils import HypothesisReport, ModelSpec, silence_observations
from .noise_utils import IncrementStream, NoisePlan, StreamId, TimeGrid, make_grid, sample_brownian
from .worker_utils import map_ordered

MIN_FILTER_POINTS = 3
RESAMPLE_THRESHOLD = 0.5        # Fraction of N below which the ESS triggers resampling.
DEFAULT_LAW_PARTICLES = 1000
FILTER_INVARIANT_SAMPLES = 65536
FILTER_INVARIANT_CHAINS = 64


# ---------------------------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestFunction:
    '''F(x, mu) evaluated on a batch x: (K, n) -> (K,). `bound` is the declared sup |F|, None if unbounded;
    eta is the declared moment exponent, None for bounded continuous F.'''
    __test__ = False   # not a pytest class

    name: str
    evaluate: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
    bound: Optional[float] = None
    eta: Optional[float] = None
    law_free: bool = False


def _f1(x, mu):
    return np.sin(x[:, 0] + mu.mean[0])


def _f2(x, mu):
    return np.cos(x[:, 0]) / (1.0 + second_moment(mu))


def _f3(x, mu):
    return x[:, 0] * np.exp(-x[:, 0] ** 2)


F1 = TestFunction(name='F1', evaluate=_f1, bound=1.0)
F2 = TestFunction(name='F2', evaluate=_f2, bound=1.0)
F3 = TestFunction(name='F3', evaluate=_f3, bound=1.0 / math.sqrt(2.0 * math.e), law_free=True)

TEST_FUNCTIONS: Dict[str, TestFunction] = {F.name: F for F in (F1, F2, F3)}


def constant_function(c: float) -> TestFunction:
    return TestFunction(
        name=f'const({c:g})',
        evaluate=lambda x, mu: np.full(np.shape(x)[0], float(c)),
        bound=abs(float(c)),
        law_free=True,
    )


def get_test_function(name: str) -> TestFunction:
    if name not in TEST_FUNCTIONS:
        raise ValueError(f"unknown test function '{name}', bundled: {', '.join(sorted(TEST_FUNCTIONS))}")
    return TEST_FUNCTIONS[name]


def check_test_function_bound(F: TestFunction, n_points: int, radius: float, seed: int, cloud_size: int = 8) -> HypothesisReport:
    '''Samples |F(x, mu)| <= F.bound on points and random clouds in the ball of the given radius.'''
    if F.bound is None:
        raise ValueError(f"test function '{F.name}' declares no bound")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-radius, radius, size=(n_points, 1))
    values = np.array([
        F.evaluate(x[i:i + 1], EmpiricalMeasure.uniform(rng.uniform(-radius, radius, size=cloud_size)))[0]
        for i in range(n_points)
    ])
    raw = np.abs(values) - F.bound
    margins = raw - 1e-12 * (1.0 + F.bound)
    return HypothesisReport(
        hypothesis=f'bound_{F.name}',
        n_pairs=n_points,
        worst_margin=float(margins.max()),
        passed=bool(margins.max() <= 0),
        worst_raw_margin=float(raw.max()),
    )


# ---------------------------------------------------------------------------------------------
# Weights and the particle filter
# ---------------------------------------------------------------------------------------------

class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


@dataclass
class FilterOutput:
    grid_obs: TimeGrid
    log_weights: Optional[np.ndarray]          # (N, n_steps + 1), None when not recorded
    final_log_weights: np.ndarray              # (N,)
    estimates: Dict[str, np.ndarray]           # F name -> (n_steps + 1,) path of pi^eps_t(F)
    ess_path: np.ndarray                       # (n_steps + 1,)
    log_normalizer_path: np.ndarray            # (n_steps + 1,) log of the P-tilde_t(1) estimate
    resampled_at: List[int] = field(default_factory=list)
    stderrs: Dict[str, np.ndarray] = field(default_factory=dict)   # F name -> delta-method stderr path

    @property
    def normalizer_path(self) -> np.ndarray:
        return np.exp(self.log_normalizer_path)


def _ks_increment(h: np.ndarray, dY: np.ndarray, dt: float) -> np.ndarray:
    '''h: (K, m), dY: (m,) shared or (K, m) per particle -> (K,) left-point increment h . dY - |h|^2 dt / 2.'''
    return np.sum(h * dY, axis=1) - 0.5 * np.sum(h ** 2, axis=1) * dt


def ks_log_weight(hpath: np.ndarray, Y: SlowPath) -> np.ndarray:
    """
    log Lambda on the grid for one particle: logL[0] = 0 and
    logL[k+1] = logL[k] + h[k] . (Y[k+1] - Y[k]) - |h[k]|^2 dt / 2.
    """
    hpath = np.asarray(hpath, dtype=float)
    if hpath.ndim == 1:
        hpath = hpath[:, None]
    if hpath.shape != Y.increments.shape:
        raise ValueError(f'hpath must have shape {Y.increments.shape} to match Y, received: {hpath.shape}')
    steps = np.sum(hpath * Y.increments, axis=1) - 0.5 * np.sum(hpath ** 2, axis=1) * Y.grid_obs.dt
    return np.concatenate([[0.0], np.cumsum(steps)])


def effective_sample_size(log_weights: np.ndarray) -> float:
    '''(sum w)^2 / sum w^2, computed from log-weights.'''
    return float(np.exp(2.0 * logsumexp(log_weights) - logsumexp(2.0 * log_weights)))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    '''Indices drawn by systematic resampling from normalized weights.'''
    n = weights.shape[0]
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side='right'), n - 1)


def _weighted_estimate(probabilities: np.ndarray, values: np.ndarray) -> float:
    # Shifted by the first particle's value, so a constant F comes out exact.
    return float(values[0] + probabilities @ (values - values[0]))


def _weighted_stderr(probabilities: np.ndarray, values: np.ndarray, estimate: float) -> float:
    '''Self-normalised importance-sampling error: sqrt(sum p_i^2 (F_i - pi)^2).'''
    return float(np.sqrt(np.sum(probabilities ** 2 * (values - estimate) ** 2)))


def particle_filter(model: ModelSpec, epsilon: float, Y: SlowPath, N: int, M_law: int, Fs: Sequence[TestFunction],
                    plan: NoisePlan, replication: int = 0, kappa: float = DEFAULT_KAPPA, resample: bool = False,
                    record_weights: bool = True) -> FilterOutput:
    """
    pi^eps_t(F) = sum_i Lambda^i_t F(X^i_t, mu_t) / sum_i Lambda^i_t with N signal particles run under the
    physical measure (they never see Y) and the law mu_t taken from an independent M_law ensemble.
    The weight of each coarse step uses the micro-step average of h over that step.
    With resample=True, systematic resampling runs whenever the ESS drops below N/2.
    """
    if type(N) != int or N < 1:
        raise ValueError(f'N must be a positive int, received: {N!r}')
    if type(M_law) != int or M_law < 2:
        raise ValueError(f'M_law must be an int >= 2, received: {M_law!r}')
    if Y.values.shape[1] != model.dim_obs:
        raise ValueError(f'Y must have dimension {model.dim_obs}, received: {Y.values.shape[1]}')

    grid = Y.grid_obs
    dY = Y.increments
    initial = model.sample_initial(plan.generator(StreamId('filter/signal/initial', replication, 0)), N)
    law_initial = model.sample_initial(plan.generator(StreamId('filter/law/initial', replication, 0)), M_law)
    signal = FastStepper(model, epsilon, grid.dt, kappa, initial, plan, 'filter/signal', replication)
    law = FastStepper(model, epsilon, grid.dt, kappa, law_initial, plan, 'filter/law', replication)
    everyone = np.arange(N)
    resample_rng = plan.generator(StreamId('filter/resample', replication, 0)) if resample else None

    log_w = np.zeros(N)
    history = np.empty((N, grid.n_steps + 1)) if record_weights else None
    estimates = {F.name: np.empty(grid.n_steps + 1) for F in Fs}
    stderrs = {F.name: np.empty(grid.n_steps + 1) for F in Fs}
    ess = np.empty(grid.n_steps + 1)
    log_norm = np.empty(grid.n_steps + 1)
    log_offset = 0.0        # log normalizer carried across resampling events
    resampled_at = []

    def record(k: int, mu: EmpiricalMeasure):
        total = logsumexp(log_w)
        if not np.isfinite(total):
            raise WeightUnderflowError(min_log_weight=float(np.nanmin(log_w)), time=float(grid.times[k]))
        probabilities = np.exp(log_w - total)
        for F in Fs:
            values = F.evaluate(signal.state, mu)
            estimates[F.name][k] = _weighted_estimate(probabilities, values)
            stderrs[F.name][k] = _weighted_stderr(probabilities, values, estimates[F.name][k])
        ess[k] = effective_sample_size(log_w)
        log_norm[k] = log_offset + total - math.log(N)
        if history is not None:
            history[:, k] = log_w

    record(0, EmpiricalMeasure.uniform(law.state))
    for k in range(grid.n_steps):
        mu = EmpiricalMeasure.uniform(law.state)
        h_mean = signal.advance(mu, everyone) / grid.dt
        law.advance()
        log_w = log_w + _ks_increment(h_mean, dY[k], grid.dt)
        record(k + 1, EmpiricalMeasure.uniform(law.state))

        if resample and ess[k + 1] < RESAMPLE_THRESHOLD * N:
            total = logsumexp(log_w)
            indices = systematic_resample(np.exp(log_w - total), resample_rng)
            signal.state = signal.state[indices]
            log_offset += total - math.log(N)
            log_w = np.zeros(N)
            resampled_at.append(k + 1)

    return FilterOutput(
        grid_obs=grid,
        log_weights=history,
        final_log_weights=log_w,
        estimates=estimates,
        ess_path=ess,
        log_normalizer_path=log_norm,
        resampled_at=resampled_at,
        stderrs=stderrs,
    )


# ---------------------------------------------------------------------------------------------
# Averaged filter
# ---------------------------------------------------------------------------------------------

@dataclass
class AveragedFilterOutput:
    pi: np.ndarray              # pi-bar_t(Fbar), constant Fbar
    log_Lambda: np.ndarray      # hbar . Ybar_t - |hbar|^2 t / 2
    P: np.ndarray               # P-bar_t(Fbar) = Fbar Lambda-bar_t

    @property
    def Lambda(self) -> np.ndarray:
        return np.exp(self.log_Lambda)


def averaged_filter(hbar, Fbar: float, Ybar: SlowPath) -> AveragedFilterOutput:
    '''pi-bar_t(Fbar) = P-bar_t(Fbar) / P-bar_t(1) = Fbar at every grid time.'''
    hbar = np.atleast_1d(np.asarray(hbar, dtype=float))
    if hbar.shape != (Ybar.values.shape[1],):
        raise ValueError(f'hbar must have shape ({Ybar.values.shape[1]},), received: {hbar.shape}')
    times = Ybar.grid_obs.times
    log_Lambda = Ybar.values @ hbar - 0.5 * float(hbar @ hbar) * times
    Lambda = np.exp(log_Lambda)
    P = float(Fbar) * Lambda
    pi = np.divide(P, Lambda, out=np.full_like(Lambda, float(Fbar)), where=np.isfinite(Lambda) & (Lambda > 0))
    return AveragedFilterOutput(pi=pi, log_Lambda=log_Lambda, P=P)


# ---------------------------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    eps_grid: np.ndarray
    mean_sq_gap: np.ndarray
    stderr: np.ndarray
    n_reps: int
    Fbar: float
    test_function: str
    floor: float = float('nan')            # mean squared gap of the h = 0 control run
    floor_stderr: float = float('nan')
    fitted_slope: float = float('nan')

    def monotone_violations(self, n_se: float = 2.0) -> int:
        growth = np.diff(self.mean_sq_gap)
        slack = n_se * np.sqrt(self.stderr[1:] ** 2 + self.stderr[:-1] ** 2)
        return int(np.sum(growth > slack))

    def limit_reached(self, ratio: float = 0.25, n_se: float = 2.0) -> bool:
        '''Smallest-eps gap at most `ratio` times the largest-eps gap, or within n_se stderr of the control floor.'''
        first, last = self.mean_sq_gap[0], self.mean_sq_gap[-1]
        if last <= ratio * first:
            return True
        if np.isnan(self.floor):
            return False
        return bool(abs(last - self.floor) <= n_se * math.hypot(self.stderr[-1], self.floor_stderr))

    def rows(self) -> List[Tuple[float, float, float, int, float]]:
        return [(float(e), float(m), float(s), self.n_reps, self.Fbar) for e, m, s in zip(self.eps_grid, self.mean_sq_gap, self.stderr)]


def _observed_path(model: ModelSpec, epsilon: float, grid_obs: TimeGrid, M_signal: int, plan: NoisePlan,
                   replication: int, kappa: float) -> SlowPath:
    '''Y^eps under the physical measure: particle 0 of an M_signal ensemble plus an independent W.'''
    ensemble = simulate_fast_ensemble(model, epsilon, grid_obs, M_signal, kappa, plan, replication=replication,
                                      track=(0,), role='experiment/signal')
    W = sample_brownian(grid_obs, model.dim_obs, plan, StreamId('experiment/obs', replication, 0))
    return simulate_observation(model, ensemble, W, particle=0)


def filter_convergence_experiment(model: ModelSpec, eps_grid: Sequence[float], t_eval: float, F: TestFunction,
                                  N: int, M_law: int, n_reps: int, plan: NoisePlan, T: Optional[float] = None,
                                  dt_obs: Optional[float] = None, kappa: float = DEFAULT_KAPPA,
                                  Fbar: Optional[float] = None, control: bool = True, resample: bool = False,
                                  context: Optional[RunContext] = None) -> ExperimentReport:
    """
    For every epsilon, n_reps independent (signal ensemble, W) pairs generate Y^eps and the particle
    filter estimates pi^eps_{t_eval}(F); the report holds the mean of (pi - Fbar)^2 with its stderr.
    With control=True the same filter is also run on h = 0 at the smallest epsilon; its mean squared
    gap is the N-particle noise floor.
    """
    eps_grid = check_eps_grid(eps_grid, MIN_FILTER_POINTS)
    T = t_eval if T is None else T
    if not 0 < t_eval <= T:
        raise ValueError(f't_eval must lie in (0, T], received: t_eval={t_eval}, T={T}')
    if type(n_reps) != int or n_reps < 2:
        raise ValueError(f'n_reps must be an int >= 2, received: {n_reps!r}')
    if Fbar is None:
        nu = sample_invariant(model, n_samples=FILTER_INVARIANT_SAMPLES, plan=plan, n_chains=FILTER_INVARIANT_CHAINS)
        Fbar = float(compute_Fbar(F, nu).value[0])

    grid_obs = make_grid(T, dt_obs if dt_obs else 1e-3 * T)
    k_eval = int(round(t_eval / grid_obs.dt))

    def squared_gap(filter_model: ModelSpec, eps: float, rep: int) -> float:
        Y = _observed_path(filter_model, eps, grid_obs, M_law, plan, rep, kappa)
        output = particle_filter(filter_model, eps, Y, N, M_law, [F], plan, replication=rep, kappa=kappa,
                                 resample=resample, record_weights=False)
        return (output.estimates[F.name][k_eval] - Fbar) ** 2

    jobs = [(float(eps), rep) for eps in eps_grid for rep in range(n_reps)]
    gaps = np.array(map_ordered(context, lambda job: squared_gap(model, *job), jobs)).reshape(eps_grid.size, n_reps)
    means = gaps.mean(axis=1)
    stderr = gaps.std(axis=1, ddof=1) / math.sqrt(n_reps)

    floor, floor_stderr = float('nan'), float('nan')
    if control:
        silent = silence_observations(model)
        control_gaps = np.array(map_ordered(context, lambda rep: squared_gap(silent, float(eps_grid[-1]), rep), range(n_reps)))
        floor = float(control_gaps.mean())
        floor_stderr = float(control_gaps.std(ddof=1) / math.sqrt(n_reps))

    slope = fit_rate(eps_grid, means) if np.all(means > 0) else float('nan')
    return ExperimentReport(
        eps_grid=eps_grid,
        mean_sq_gap=means,
        stderr=stderr,
        n_reps=n_reps,
        Fbar=Fbar,
        test_function=F.name,
        floor=floor,
        floor_stderr=floor_stderr,
        fitted_slope=slope,
    )


def martingale_diagnostic(model: ModelSpec, epsilon: float, N: int, T: float, plan: NoisePlan,
                          dt_obs: Optional[float] = None, M_law: int = DEFAULT_LAW_PARTICLES,
                          kappa: float = DEFAULT_KAPPA) -> MonteCarloEstimate:
    """
    Mean of Lambda^i_T over N particles when particle i is weighted against its own Brownian path
    Y^i, independent of the signal. Each weight is then an exponential martingale with
    E Lambda_T = 1, exactly so for the left-point discretization, and the particles are
    independent given the law path.
    """
    if type(N) != int or N < 2:
        raise ValueError(f'N must be an int >= 2, received: {N!r}')
    if type(M_law) != int or M_law < 2:
        raise ValueError(f'M_law must be an int >= 2, received: {M_law!r}')
    grid = make_grid(T, dt_obs if dt_obs else 1e-3 * T)
    initial = model.sample_initial(plan.generator(StreamId('martingale/signal/initial', 0, 0)), N)
    law_initial = model.sample_initial(plan.generator(StreamId('martingale/law/initial', 0, 0)), M_law)
    signal = FastStepper(model, epsilon, grid.dt, kappa, initial, plan, 'martingale/signal', 0)
    law = FastStepper(model, epsilon, grid.dt, kappa, law_initial, plan, 'martingale/law', 0)
    observations = IncrementStream(plan, 'martingale/obs', 0, N, model.dim_obs, grid.dt)
    everyone = np.arange(N)

    log_w = np.zeros(N)
    for _ in range(grid.n_steps):
        h_mean = signal.advance(EmpiricalMeasure.uniform(law.state), everyone) / grid.dt
        law.advance()
        log_w = log_w + _ks_increment(h_mean, observations.next(), grid.dt)

    weights = np.exp(log_w)
    return MonteCarloEstimate(value=float(weights.mean()), stderr=float(weights.std(ddof=1) / math.sqrt(N)))


def inverse_moment_diagnostic(model: ModelSpec, epsilon: float, r: float, n_reps: int, plan: NoisePlan,
                              N: int = 200, T: float = 1.0, dt_obs: Optional[float] = None,
                              M_law: int = DEFAULT_LAW_PARTICLES, kappa: float = DEFAULT_KAPPA,
                              context: Optional[RunContext] = None) -> MonteCarloEstimate:
    """
    Monte-Carlo estimate of E[P^eps_T(1)^(-r)] over n_reps observation paths generated under the
    physical measure, with P^eps_T(1) the N-particle mean of Lambda_T. Only finiteness and
    stability across epsilon are meaningful; no numeric bound is asserted.
    """
    if not r > 1:
        raise ValueError(f'r must be > 1, received: {r}')
    if type(n_reps) != int or n_reps < 2:
        raise ValueError(f'n_reps must be an int >= 2, received: {n_reps!r}')
    grid_obs = make_grid(T, dt_obs if dt_obs else 1e-3 * T)

    def one(rep: int) -> float:
        Y = _observed_path(model, epsilon, grid_obs, M_law, plan, rep, kappa)
        output = particle_filter(model, epsilon, Y, N, M_law, [], plan, replication=rep, kappa=kappa, record_weights=False)
        return math.exp(-r * float(output.log_normalizer_path[-1]))

    values = np.array(map_ordered(context, one, range(n_reps)))
    return MonteCarloEstimate(value=float(values.mean()), stderr=float(values.std(ddof=1) / math.sqrt(n_reps)))
