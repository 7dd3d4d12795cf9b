"""
Euler-Maruyama integrators for the fast signal X^eps, the observation Y^eps, the frozen
process and the averaged observation, plus the closed-form OU law of the example model.
"""
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import BlowUpError
from .measure_utils import EmpiricalMeasure
from .model_utils import ModelSpec
from .noise_utils import BrownianPath, IncrementStream, NoisePlan, StreamId, TimeGrid, make_grid

DEFAULT_KAPPA = 0.01
MAX_KAPPA = 0.05


@dataclass(frozen=True, eq=False)
class Ensemble:
    model: ModelSpec
    epsilon: float
    grid_obs: TimeGrid
    micro_factor: float
    micro_step: float
    states: np.ndarray                      # (n_steps + 1, M, n)
    tracked: Tuple[int, ...]                # particles whose drift integrals were recorded
    drift_integrals: np.ndarray             # (n_steps, len(tracked), m): int_{t_k}^{t_k+1} (h(X_s, mu_k) - drift_offset) ds
    drift_offset: np.ndarray                # (m,)

    @property
    def M(self) -> int:
        return self.states.shape[1]

    @cached_property
    def law_path(self) -> List[EmpiricalMeasure]:
        return [EmpiricalMeasure.uniform(states) for states in self.states]


@dataclass(frozen=True, eq=False)
class SlowPath:
    grid_obs: TimeGrid
    values: np.ndarray                      # (n_steps + 1, m)
    noise_ref: Optional[StreamId]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)


def micro_steps_per_coarse(coarse_dt: float, epsilon: float, kappa: float) -> int:
    '''Smallest count n with coarse_dt / n <= epsilon * kappa; the micro-step then divides the coarse step exactly.'''
    return max(1, int(math.ceil(coarse_dt / (epsilon * kappa) - 1e-9)))


def _check_fast_arguments(epsilon: float, kappa: float):
    if not 0 < epsilon <= 1:
        raise ValueError(f'epsilon must lie in (0, 1], received: {epsilon}')
    if not 0 < kappa <= MAX_KAPPA:
        raise ValueError(f'kappa must lie in (0, {MAX_KAPPA}], received: {kappa}')


def _raise_if_blown_up(states: np.ndarray, time: float, process: str):
    finite = np.isfinite(states).all(axis=tuple(range(1, states.ndim)))
    if not finite.all():
        raise BlowUpError(particle=int(np.argmin(finite)), time=time, process=process)


class FastStepper:
    """
    Advances a population of fast particles
        dX = (1/eps) b(X) dt + (1/sqrt(eps)) sigma(X) dB
    over one coarse step, with the law argument held fixed inside the step. Optionally returns
    left-point micro-step integrals of h(X, law) for a subset of particles.
    """

    def __init__(self, model: ModelSpec, epsilon: float, coarse_dt: float, kappa: float,
                 initial: np.ndarray, plan: NoisePlan, role: str, replication: int):
        _check_fast_arguments(epsilon, kappa)
        self.model = model
        self.epsilon = epsilon
        self.n_micro = micro_steps_per_coarse(coarse_dt, epsilon, kappa)
        self.micro_step = coarse_dt / self.n_micro
        self.drift_scale = self.micro_step / epsilon
        self.noise_scale = 1.0 / math.sqrt(epsilon)
        self.state = np.array(initial, dtype=float)
        self.noise = IncrementStream(plan, role, replication, self.state.shape[0], model.dim_noise_fast, self.micro_step)

    def advance(self, law: Optional[EmpiricalMeasure] = None, track: Optional[np.ndarray] = None,
                offset: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        model = self.model
        x = self.state
        if track is not None:
            path = np.empty((self.n_micro, len(track), model.dim_signal))
        for j in range(self.n_micro):
            if track is not None:
                path[j] = x[track]
            x = x + self.drift_scale * model.drift(x) + self.noise_scale * model.noise_term(x, self.noise.next())
        self.state = x
        if track is None:
            return None
        h_values = model.obs(path.reshape(-1, model.dim_signal), law)
        if offset is not None:
            h_values = h_values - offset
        return h_values.reshape(self.n_micro, len(track), model.dim_obs).sum(axis=0) * self.micro_step


def simulate_fast_ensemble(model: ModelSpec, epsilon: float, grid_obs: TimeGrid, M: int, kappa: float, plan: NoisePlan,
                           replication: int = 0, track: Sequence[int] = (), role: str = 'signal',
                           drift_offset=None) -> Ensemble:
    """
    M independent Euler-Maruyama paths of the fast equation, micro-step dt_f <= eps * kappa,
    states recorded on grid_obs. The law plugged into h over [t_k, t_k+1] is the uniform cloud
    of the step-k states. Drift integrals are recorded for the `track`ed particles, centred
    at drift_offset when one is given (a constant h equal to the offset then integrates to exactly 0).
    """
    if type(M) != int or M < 2:
        raise ValueError(f'M must be an int >= 2, received: {M!r}')
    track = np.asarray(track, dtype=int)
    if track.size and (track.min() < 0 or track.max() >= M):
        raise ValueError(f'tracked particles must lie in [0, {M}), received: {track.tolist()}')

    offset = None if drift_offset is None else np.broadcast_to(np.asarray(drift_offset, dtype=float), (model.dim_obs,))
    initial = model.sample_initial(plan.generator(StreamId(f'{role}/initial', replication, 0)), M)
    stepper = FastStepper(model, epsilon, grid_obs.dt, kappa, initial, plan, role, replication)

    states = np.empty((grid_obs.n_steps + 1, M, model.dim_signal))
    integrals = np.empty((grid_obs.n_steps, track.size, model.dim_obs))
    states[0] = stepper.state
    for k in range(grid_obs.n_steps):
        law = EmpiricalMeasure.uniform(states[k]) if track.size else None
        result = stepper.advance(law, track if track.size else None, offset)
        if result is not None:
            integrals[k] = result
        states[k + 1] = stepper.state
        _raise_if_blown_up(states[k + 1], grid_obs.times[k + 1], 'signal')

    return Ensemble(
        model=model,
        epsilon=epsilon,
        grid_obs=grid_obs,
        micro_factor=kappa,
        micro_step=stepper.micro_step,
        states=states,
        tracked=tuple(int(i) for i in track),
        drift_integrals=integrals,
        drift_offset=np.zeros(model.dim_obs) if offset is None else np.array(offset),
    )


def simulate_observation(model: ModelSpec, ensemble: Ensemble, W: BrownianPath, particle: int = 0) -> SlowPath:
    """
    Y[k+1] = Y[k] + int_{t_k}^{t_k+1} h(X_s, mu_k) ds + dW[k] driven by one designated signal particle
    with the ensemble law plugged into h. Tracked particles use their micro-step integrals;
    otherwise the left-point value h(X[k], mu_k) dt is used.
    """
    grid = ensemble.grid_obs
    if W.dim != model.dim_obs:
        raise ValueError(f'W must have dimension {model.dim_obs}, received: {W.dim}')
    if W.grid.n_steps != grid.n_steps or abs(W.grid.T - grid.T) > 1e-12 * grid.T:
        raise ValueError('W must live on the ensemble observation grid')
    if particle in ensemble.tracked:
        drift = ensemble.drift_integrals[:, ensemble.tracked.index(particle), :] + ensemble.drift_offset * grid.dt
    else:
        drift = np.vstack([
            model.obs(ensemble.states[k, particle:particle + 1], ensemble.law_path[k]) * grid.dt
            for k in range(grid.n_steps)
        ])
    values = np.vstack([np.zeros((1, model.dim_obs)), np.cumsum(drift, axis=0)]) + W.values
    return SlowPath(grid_obs=grid, values=values, noise_ref=W.stream)


def simulate_averaged(hbar, W: BrownianPath) -> SlowPath:
    '''Ybar[k] = hbar t_k + W[k], exact on the grid.'''
    hbar = np.atleast_1d(np.asarray(hbar, dtype=float))
    if hbar.shape != (W.dim,):
        raise ValueError(f'hbar must have shape ({W.dim},), received: {hbar.shape}')
    values = W.grid.times[:, None] * hbar[None, :] + W.values
    return SlowPath(grid_obs=W.grid, values=values, noise_ref=W.stream)


def simulate_frozen(model: ModelSpec, grid: TimeGrid, x0, plan: NoisePlan, n_paths: int = 1,
                    replication: int = 0, role: str = 'frozen', record: bool = True) -> np.ndarray:
    """
    Euler-Maruyama for dX = b(X) dt + sigma(X) dB at the grid step.
    x0 is a point (shared by every path) or an (n_paths, n) array of starting points.
    Returns (n_steps + 1, n_paths, n), or just the final (n_paths, n) states when record=False.
    Paths with equal (role, replication, index) share their Brownian increments.
    """
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, model.dim_signal), (n_paths, model.dim_signal)).copy()
    noise = IncrementStream(plan, role, replication, n_paths, model.dim_noise_fast, grid.dt)
    if record:
        path = np.empty((grid.n_steps + 1, n_paths, model.dim_signal))
        path[0] = x
    for k in range(grid.n_steps):
        x = x + grid.dt * model.drift(x) + model.noise_term(x, noise.next())
        _raise_if_blown_up(x, grid.times[k + 1], 'frozen')
        if record:
            path[k + 1] = x
    return path if record else x


def ou_law_oracle(sigma: float, x0: float, epsilon: float, t: float, model: Optional[ModelSpec] = None) -> Tuple[float, float]:
    '''Mean and variance of X^eps_t for the example model: x0 e^{-t/(2 eps)} and sigma^2 (1 - e^{-t/eps}).'''
    if model is not None and model.name != 'example6':
        raise ValueError(f"ou_law_oracle only applies to the example6 model, received: '{model.name}'")
    if not sigma > 0 or not epsilon > 0 or t < 0:
        raise ValueError(f'need sigma > 0, epsilon > 0, t >= 0, received: sigma={sigma}, epsilon={epsilon}, t={t}')
    mean = x0 * math.exp(-t / (2.0 * epsilon))
    variance = sigma ** 2 * (-math.expm1(-t / epsilon))
    return mean, variance


def ensemble_statistics(ensemble: Ensemble) -> List[Tuple[float, float, float, int]]:
    '''(t, mean, variance, M) rows of the first signal coordinate.'''
    values = ensemble.states[:, :, 0]
    means = values.mean(axis=1)
    variances = values.var(axis=1, ddof=1)
    return [(float(t), float(m), float(v), ensemble.M) for t, m, v in zip(ensemble.grid_obs.times, means, variances)]


def time_rescaling_check(model: ModelSpec, epsilon: float, t: float, M: int, plan: NoisePlan,
                         kappa: float = DEFAULT_KAPPA, replication: int = 0) -> dict:
    """
    X^eps_t and the frozen process at time t/eps have the same law. Compares their first two
    moments from independent ensembles of size M, each with its standard error.
    """
    grid_fast = make_grid(t, t)
    ensemble = simulate_fast_ensemble(model, epsilon, grid_fast, M, kappa, plan, replication=replication, role='rescale/fast')
    fast = ensemble.states[-1, :, 0]

    n_frozen_steps = ensemble.micro_step / epsilon
    grid_frozen = make_grid(t / epsilon, n_frozen_steps * 1.0)
    x0 = model.sample_initial(plan.generator(StreamId('rescale/frozen/initial', replication, 0)), M)
    frozen = simulate_frozen(model, grid_frozen, x0, plan, n_paths=M, replication=replication, role='rescale/frozen', record=False)[:, 0]

    def moments(sample):
        centered = sample - sample.mean()
        return {
            'mean': float(sample.mean()),
            'mean_se': float(sample.std(ddof=1) / math.sqrt(sample.size)),
            'variance': float(sample.var(ddof=1)),
            'variance_se': float(np.sqrt(np.var(centered ** 2, ddof=1) / sample.size)),
        }

    return {'fast': moments(fast), 'frozen': moments(frozen)}
