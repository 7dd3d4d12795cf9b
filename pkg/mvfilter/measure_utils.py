"""
Empirical measures: weighted point clouds standing in for laws in P_2(R^n), and the
Wasserstein-2 metric between them (exact quantile coupling in 1-D, optimal assignment
for small clouds in any dimension).
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import norm

WEIGHT_SUM_TOL = 1e-12
MAX_ASSIGNMENT_SIZE = 256
DEFAULT_QUANTILE_POINTS = 4096


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray
    weights: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"'points' must be a non-empty (N, n) array, received shape: {np.shape(self.points)}")
        if self.weights is None:
            weights = np.full(points.shape[0], 1.0 / points.shape[0])
        else:
            weights = np.asarray(self.weights, dtype=float)
            if weights.shape != (points.shape[0],):
                raise ValueError(f"'weights' must have shape ({points.shape[0]},), received: {weights.shape}")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError(f"'weights' must be nonnegative and sum to 1, received sum: {weights.sum()!r}")
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'weights', weights)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    @cached_property
    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    @cached_property
    def sorted_1d(self) -> Tuple[np.ndarray, np.ndarray]:
        '''Sorted 1-D atoms and their weights. Law-dependent coefficients reuse this per time step.'''
        if self.dim != 1:
            raise ValueError(f"sorted_1d needs a 1-D measure, received dimension {self.dim}")
        order = np.argsort(self.points[:, 0], kind='stable')
        return self.points[order, 0], self.weights[order]

    @classmethod
    def uniform(cls, points) -> 'EmpiricalMeasure':
        return cls(points=points)

    @classmethod
    def dirac(cls, point) -> 'EmpiricalMeasure':
        return cls(points=np.atleast_2d(np.asarray(point, dtype=float)))


def gaussian_quantile_cloud(mean: float, std: float, n_points: int = DEFAULT_QUANTILE_POINTS) -> EmpiricalMeasure:
    '''N equi-probable quantile points of N(mean, std^2), the cloud used for analytic 1-D laws.'''
    levels = (np.arange(n_points) + 0.5) / n_points
    return EmpiricalMeasure.uniform(mean + std * norm.ppf(levels))


def second_moment(mu: EmpiricalMeasure) -> float:
    return float(mu.weights @ np.sum(mu.points ** 2, axis=1))


def _wasserstein2_sq_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    u_values, u_weights = mu.sorted_1d
    v_values, v_weights = nu.sorted_1d

    # Equal-size uniform clouds: the monotone coupling pairs sorted atoms one to one.
    if mu.size == nu.size and mu.is_uniform and nu.is_uniform:
        return float(np.mean((u_values - v_values) ** 2))

    u_cw = np.cumsum(u_weights)
    v_cw = np.cumsum(v_weights)
    qs = np.unique(np.concatenate([u_cw, v_cw]))
    qs = qs[qs > 0]
    deltas = np.diff(np.concatenate([[0.0], qs]))
    u_q = u_values[np.clip(np.searchsorted(u_cw, qs), 0, mu.size - 1)]
    v_q = v_values[np.clip(np.searchsorted(v_cw, qs), 0, nu.size - 1)]
    return float(np.sum(deltas * (u_q - v_q) ** 2))


def wasserstein2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """
    Exact W2 between two 1-D empirical measures via the monotone (quantile) coupling.
    Works with arbitrary weights and unequal sizes.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError(f"wasserstein2_1d needs 1-D measures, received dimensions {mu.dim} and {nu.dim}")
    return float(np.sqrt(max(_wasserstein2_sq_1d(mu, nu), 0.0)))


def wasserstein2_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """
    Exact W2 between equal-size uniform clouds in any dimension, from the optimal assignment
    of the squared-distance cost matrix. Intended as a test oracle, so the size is capped.
    """
    if mu.size != nu.size:
        raise ValueError(f"assignment solver needs equal sizes, received {mu.size} and {nu.size}")
    if mu.size > MAX_ASSIGNMENT_SIZE:
        raise ValueError(f"assignment solver is capped at N={MAX_ASSIGNMENT_SIZE}, received N={mu.size}")
    if not (mu.is_uniform and nu.is_uniform):
        raise ValueError("assignment solver needs uniform weights")
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")

    cost = cdist(mu.points, nu.points, metric='sqeuclidean')
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    '''Exact 1-D path when possible, assignment otherwise.'''
    if mu.dim == 1 and nu.dim == 1:
        return wasserstein2_1d(mu, nu)
    return wasserstein2_assignment(mu, nu)


def paired_upper_bound_check(xi, zeta) -> Tuple[float, float]:
    """
    Both sides of W2^2(L_xi, L_zeta) <= E|xi - zeta|^2 computed from paired samples.
    Returns (w2sq, msq).
    """
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if xi.shape != zeta.shape:
        raise ValueError(f"paired samples must have equal shapes, received {xi.shape} and {zeta.shape}")
    mu, nu = EmpiricalMeasure.uniform(xi), EmpiricalMeasure.uniform(zeta)
    w2sq = wasserstein2(mu, nu) ** 2
    diff = mu.points - nu.points
    msq = float(np.mean(np.sum(diff ** 2, axis=1)))
    return w2sq, msq
