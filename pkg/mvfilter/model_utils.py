"""
Coefficient interfaces for the fast-slow system, the sampled hypothesis checkers and the
bundled reference models.

Array conventions used across the package:
    drift(x)          x: (K, n)  ->  (K, n)
    diffusion(x)      x: (K, n)  ->  (K, n, d)
    obs(x, mu)        x: (K, n), mu: EmpiricalMeasure  ->  (K, m)
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .measure_utils import EmpiricalMeasure, wasserstein2

RELATIVE_TOL = 1e-12
LOCAL_PAIR_SCALE = 1e-3     # Relative size of the small-perturbation pairs.
CLOUD_SIZE = 8              # Atoms per sampled measure in the (H_h) check.

InitialSignal = Union[float, np.ndarray, Callable[[np.random.Generator, int], np.ndarray]]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    dim_signal: int
    dim_noise_fast: int
    dim_obs: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    obs: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
    lip_b_sigma: float
    lip_h: float
    dissipativity: float
    obs_bound: float
    initial_signal: InitialSignal = 0.0
    constant_diffusion: Optional[np.ndarray] = None     # (n, d) when the noise is additive.
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for dim_name in ('dim_signal', 'dim_noise_fast', 'dim_obs'):
            value = getattr(self, dim_name)
            if type(value) != int or value < 1:
                raise ValueError(f'{dim_name} must be a positive int, received: {value!r}')
        if self.lip_b_sigma < 0 or self.lip_h < 0:
            raise ValueError(f'Lipschitz constants must be nonnegative, received L1={self.lip_b_sigma}, L2={self.lip_h}')
        if self.obs_bound <= 0:
            raise ValueError(f'obs_bound must be > 0, received: {self.obs_bound}')
        if not self.dissipativity > 0:
            raise ValueError(f'dissipativity beta must be > 0, received: {self.dissipativity}')

    @property
    def alpha(self) -> float:
        '''beta - 2 L1, the growth rate of the second-moment bound; positive when beta > 2 L1.'''
        return self.dissipativity - 2 * self.lip_b_sigma

    @property
    def has_deterministic_start(self) -> bool:
        return not callable(self.initial_signal)

    def sample_initial(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if callable(self.initial_signal):
            values = np.asarray(self.initial_signal(rng, size), dtype=float).reshape(size, self.dim_signal)
        else:
            point = np.broadcast_to(np.asarray(self.initial_signal, dtype=float), (self.dim_signal,))
            values = np.tile(point, (size, 1))
        return values

    def initial_second_moment(self, n_samples: int = 100_000) -> float:
        '''E|xi|^2; exact for a deterministic start, a fixed-seed Monte-Carlo estimate otherwise.'''
        rng = np.random.default_rng(0)
        values = self.sample_initial(rng, 1 if self.has_deterministic_start else n_samples)
        return float(np.mean(np.sum(values ** 2, axis=1)))

    def noise_term(self, x: np.ndarray, dB: np.ndarray) -> np.ndarray:
        '''sigma(x) dB for a batch; dB: (K, d).'''
        if self.constant_diffusion is not None:
            return dB @ self.constant_diffusion.T
        return np.einsum('knd,kd->kn', self.diffusion(x), dB)

    def with_obs(self, obs, obs_bound: float, lip_h: float, suffix: str) -> 'ModelSpec':
        return replace(self, name=f'{self.name}{suffix}', obs=obs, obs_bound=obs_bound, lip_h=lip_h)

    def with_initial(self, initial_signal: InitialSignal) -> 'ModelSpec':
        return replace(self, initial_signal=initial_signal)


@dataclass
class HypothesisReport:
    hypothesis: str
    n_pairs: int
    worst_margin: float          # max over samples of LHS - RHS - tolerance; pass <=> worst_margin <= 0.
    passed: bool
    worst_raw_margin: float      # max over samples of LHS - RHS, without tolerance.
    empirical_constant: Optional[float] = None


# ---------------------------------------------------------------------------------------------
# Bundled models
# ---------------------------------------------------------------------------------------------

def sin_abs_obs(x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
    """
    h(x, mu) = int sin|x + u| mu(du) for 1-D clouds in O((K + N) log N).
    sin|s| = sign(s) sin(s) and sin(x + u) = sin x cos u + cos x sin u, so the integral splits
    at u = -x into two prefix sums over the sorted atoms.
    """
    u_values, u_weights = mu.sorted_1d
    x = np.asarray(x, dtype=float).reshape(-1)
    cum_cos = np.concatenate([[0.0], np.cumsum(u_weights * np.cos(u_values))])
    cum_sin = np.concatenate([[0.0], np.cumsum(u_weights * np.sin(u_values))])
    below = np.searchsorted(u_values, -x, side='left')     # atoms with x + u < 0
    cos_part = cum_cos[-1] - 2.0 * cum_cos[below]
    sin_part = cum_sin[-1] - 2.0 * cum_sin[below]
    return (np.sin(x) * cos_part + np.cos(x) * sin_part)[:, None]


def sin_abs_obs_direct(x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
    '''O(K N) reference evaluation of sin_abs_obs.'''
    x = np.asarray(x, dtype=float).reshape(-1)
    return (np.sin(np.abs(x[:, None] + mu.points[None, :, 0])) @ mu.weights)[:, None]


def example_model(sigma: float, x0: float) -> ModelSpec:
    '''b(x) = -x/2, sigma(x) = sigma, h(x, mu) = int sin|x + u| mu(du); L1 = 1/4, L2 = 1, beta = 1.'''
    if not sigma > 0:
        raise ValueError(f'sigma must be > 0, received: {sigma}')
    sigma_matrix = np.array([[float(sigma)]])
    return ModelSpec(
        name='example6',
        dim_signal=1,
        dim_noise_fast=1,
        dim_obs=1,
        drift=lambda x: -0.5 * x,
        diffusion=lambda x: np.broadcast_to(sigma_matrix, (x.shape[0], 1, 1)),
        obs=sin_abs_obs,
        lip_b_sigma=0.25,
        lip_h=1.0,
        dissipativity=1.0,
        obs_bound=1.0,
        initial_signal=float(x0),
        constant_diffusion=sigma_matrix,
        params={'sigma': float(sigma), 'x0': float(x0)},
    )


def linear_ou_model(sigma: float, x0: float) -> ModelSpec:
    '''b(x) = -x/4, sigma(x) = sigma, h(x, mu) = tanh(x - mean(mu)); L1 = 1/16, L2 = 2, beta = 1/2.'''
    if not sigma > 0:
        raise ValueError(f'sigma must be > 0, received: {sigma}')
    sigma_matrix = np.array([[float(sigma)]])
    return ModelSpec(
        name='linear_ou',
        dim_signal=1,
        dim_noise_fast=1,
        dim_obs=1,
        drift=lambda x: -0.25 * x,
        diffusion=lambda x: np.broadcast_to(sigma_matrix, (x.shape[0], 1, 1)),
        obs=lambda x, mu: np.tanh(x - mu.mean),
        lip_b_sigma=1.0 / 16.0,
        lip_h=2.0,
        dissipativity=0.5,
        obs_bound=1.0,
        initial_signal=float(x0),
        constant_diffusion=sigma_matrix,
        params={'sigma': float(sigma), 'x0': float(x0)},
    )


def silence_observations(model: ModelSpec) -> ModelSpec:
    '''Same signal, h = 0: uninformative observations.'''
    def obs(x, mu):
        return np.zeros((np.shape(x)[0], model.dim_obs))
    return model.with_obs(obs, obs_bound=model.obs_bound, lip_h=0.0, suffix='-h0')


MODEL_REGISTRY: Dict[str, Callable[[float, float], ModelSpec]] = {}


def register_model(name: str):
    '''Decorator adding a factory (sigma, x0) -> ModelSpec to the registry used by the CLI.'''
    def decorator(factory):
        if name in MODEL_REGISTRY:
            raise ValueError(f"model '{name}' is already registered")
        MODEL_REGISTRY[name] = factory
        return factory
    return decorator


register_model('example6')(example_model)
register_model('linear_ou')(linear_ou_model)


def get_model(name: str, sigma: float, x0: float) -> ModelSpec:
    if name not in MODEL_REGISTRY:
        raise ValueError(f"unknown model '{name}', registered: {', '.join(sorted(MODEL_REGISTRY))}")
    return MODEL_REGISTRY[name](sigma, x0)


# ---------------------------------------------------------------------------------------------
# Hypothesis checkers
# ---------------------------------------------------------------------------------------------

def _sample_ball(rng: np.random.Generator, size: int, dim: int, radius: float) -> np.ndarray:
    directions = rng.standard_normal((size, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.uniform(size=size) ** (1.0 / dim)
    return directions * radii[:, None]


def _sample_pairs(rng: np.random.Generator, n_pairs: int, dim: int, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    '''Half independent pairs in the ball, half small perturbations x2 = x1 + O(1e-3 radius).'''
    x1 = _sample_ball(rng, n_pairs, dim, radius)
    x2 = _sample_ball(rng, n_pairs, dim, radius)
    n_local = n_pairs // 2
    x2[:n_local] = x1[:n_local] + _sample_ball(rng, n_local, dim, LOCAL_PAIR_SCALE * radius)
    return x1, x2


def _report(hypothesis: str, raw: np.ndarray, scale: np.ndarray, constant: Optional[float] = None) -> HypothesisReport:
    margins = raw - RELATIVE_TOL * scale
    worst = float(np.max(margins))
    return HypothesisReport(
        hypothesis=hypothesis,
        n_pairs=int(raw.shape[0]),
        worst_margin=worst,
        passed=worst <= 0,
        worst_raw_margin=float(np.max(raw)),
        empirical_constant=constant,
    )


def _check_counts(n_pairs: int, radius: float):
    if type(n_pairs) != int or n_pairs < 1:
        raise ValueError(f'n_pairs must be a positive int, received: {n_pairs!r}')
    if not radius > 0:
        raise ValueError(f'radius must be > 0, received: {radius}')


def dissipativity_margins(model: ModelSpec, x1: np.ndarray, x2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    '''LHS - RHS of 2<dx, db> + |dsigma|^2 <= -beta |dx|^2 per pair, and |dx|^2.'''
    delta = x1 - x2
    delta_sq = np.sum(delta ** 2, axis=1)
    lhs = 2.0 * np.sum(delta * (model.drift(x1) - model.drift(x2)), axis=1)
    lhs += np.sum((model.diffusion(x1) - model.diffusion(x2)) ** 2, axis=(1, 2))
    return lhs + model.dissipativity * delta_sq, delta_sq


def check_dissipativity(model: ModelSpec, n_pairs: int, radius: float, seed: int) -> HypothesisReport:
    _check_counts(n_pairs, radius)
    rng = np.random.default_rng(seed)
    x1, x2 = _sample_pairs(rng, n_pairs, model.dim_signal, radius)
    raw, delta_sq = dissipativity_margins(model, x1, x2)
    return _report('H2_b_sigma', raw, 1.0 + delta_sq)


def _random_clouds(rng: np.random.Generator, n_pairs: int, dim: int, radius: float) -> Tuple[List[EmpiricalMeasure], List[EmpiricalMeasure]]:
    first, second = [], []
    for i in range(n_pairs):
        atoms = _sample_ball(rng, CLOUD_SIZE, dim, radius)
        if i < n_pairs // 2:
            other = atoms + _sample_ball(rng, CLOUD_SIZE, dim, LOCAL_PAIR_SCALE * radius)
        else:
            other = _sample_ball(rng, CLOUD_SIZE, dim, radius)
        first.append(EmpiricalMeasure.uniform(atoms))
        second.append(EmpiricalMeasure.uniform(other))
    return first, second


def lipschitz_margins(model: ModelSpec, x1: np.ndarray, x2: np.ndarray,
                      mu1: List[EmpiricalMeasure], mu2: List[EmpiricalMeasure]) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    '''Raw LHS - RHS and tolerance scales for (H1_b_sigma) and (H_h), per pair.'''
    delta_sq = np.sum((x1 - x2) ** 2, axis=1)
    lhs_b = np.sum((model.drift(x1) - model.drift(x2)) ** 2, axis=1)
    lhs_b += np.sum((model.diffusion(x1) - model.diffusion(x2)) ** 2, axis=(1, 2))

    w2_sq = np.array([wasserstein2(a, b) ** 2 for a, b in zip(mu1, mu2)])
    h1 = np.vstack([model.obs(x1[i:i + 1], mu1[i]) for i in range(x1.shape[0])])
    h2 = np.vstack([model.obs(x2[i:i + 1], mu2[i]) for i in range(x2.shape[0])])
    lhs_h = np.sum((h1 - h2) ** 2, axis=1)
    return {
        'H1_b_sigma': (lhs_b - model.lip_b_sigma * delta_sq, 1.0 + delta_sq),
        'H_h': (lhs_h - model.lip_h * (delta_sq + w2_sq), 1.0 + delta_sq + w2_sq),
    }


def check_lipschitz(model: ModelSpec, n_pairs: int, radius: float, seed: int) -> Tuple[HypothesisReport, HypothesisReport]:
    """
    Sampled falsification of (H1_b_sigma): |db|^2 + |dsigma|^2 <= L1 |dx|^2, and of
    (H_h): |dh|^2 <= L2 (|dx|^2 + W2^2(mu1, mu2)) over small random clouds.
    Returns the two reports in that order.
    """
    _check_counts(n_pairs, radius)
    rng = np.random.default_rng(seed)
    x1, x2 = _sample_pairs(rng, n_pairs, model.dim_signal, radius)
    mu1, mu2 = _random_clouds(rng, n_pairs, model.dim_signal, radius)
    margins = lipschitz_margins(model, x1, x2, mu1, mu2)
    return _report('H1_b_sigma', *margins['H1_b_sigma']), _report('H_h', *margins['H_h'])


def check_obs_bound(model: ModelSpec, n_pairs: int, radius: float, seed: int) -> HypothesisReport:
    '''|h(x, mu)| <= obs_bound on sampled points and clouds.'''
    _check_counts(n_pairs, radius)
    rng = np.random.default_rng(seed)
    x = _sample_ball(rng, n_pairs, model.dim_signal, radius)
    clouds, _ = _random_clouds(rng, n_pairs, model.dim_signal, radius)
    norms = np.array([np.linalg.norm(model.obs(x[i:i + 1], clouds[i])[0]) for i in range(n_pairs)])
    return _report('H_h_bound', norms - model.obs_bound, np.full(n_pairs, 1.0 + model.obs_bound))


def check_growth(model: ModelSpec, n_points: int, radius: float, seed: int) -> HypothesisReport:
    """
    Growth bound 2<x, b(x)> + |sigma(x)|^2 <= -alpha |x|^2 + C. The constant C is never
    given numerically, so the report carries the empirical C = max(2<x,b> + |sigma|^2 + alpha |x|^2)
    over the sample (the origin is always included). Fails if beta <= 2 L1 (no positive alpha) or if that
    maximum is not finite.
    """
    _check_counts(n_points, radius)
    if model.alpha <= 0:
        return HypothesisReport(hypothesis='growth', n_pairs=0, worst_margin=float('inf'), passed=False,
                                worst_raw_margin=float('inf'), empirical_constant=float('inf'))
    rng = np.random.default_rng(seed)
    x = np.vstack([np.zeros((1, model.dim_signal)), _sample_ball(rng, n_points, model.dim_signal, radius)])
    values = 2.0 * np.sum(x * model.drift(x), axis=1) + np.sum(model.diffusion(x) ** 2, axis=(1, 2))
    values += model.alpha * np.sum(x ** 2, axis=1)
    constant = float(np.max(values))
    finite = bool(np.isfinite(constant))
    return HypothesisReport(
        hypothesis='growth',
        n_pairs=int(x.shape[0]),
        worst_margin=0.0 if finite else float('inf'),
        passed=finite,
        worst_raw_margin=0.0,
        empirical_constant=max(constant, 0.0),
    )


def check_hypotheses(model: ModelSpec, n_pairs: int, radius: float, seed: int) -> List[HypothesisReport]:
    h1, hh = check_lipschitz(model, n_pairs, radius, seed)
    return [
        h1,
        hh,
        check_dissipativity(model, n_pairs, radius, seed),
        check_obs_bound(model, n_pairs, radius, seed),
        check_growth(model, n_pairs, radius, seed),
    ]
