"""
Time grids, Brownian paths and the stream discipline behind every random draw.

Each (role, replication, particle) tuple owns a counter-based Philox stream keyed by a
SeedSequence spawn key derived from the master seed, so particles and replications can run
in any order or in parallel without changing a single draw.
"""
import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import List, NamedTuple

import numpy as np

GRID_TOL = 1e-9
NOISE_BUFFER_FLOATS = 1 << 22     # Size cap for the per-ensemble increment buffer.
MAX_CHUNK_STEPS = 1024
MIN_CHUNK_STEPS = 16


@dataclass(frozen=True, eq=False)
class TimeGrid:
    T: float
    dt: float
    n_steps: int

    @cached_property
    def times(self) -> np.ndarray:
        # linspace keeps the endpoint exactly T.
        return np.linspace(0.0, self.T, self.n_steps + 1)


def make_grid(T: float, dt: float) -> TimeGrid:
    if not T > 0:
        raise ValueError(f'T must be > 0, received: {T}')
    if not 0 < dt <= T:
        raise ValueError(f'dt must lie in (0, T], received: dt={dt}, T={T}')
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > GRID_TOL * T:
        raise ValueError(f'T/dt must be an integer, received: T={T}, dt={dt} (ratio {T / dt!r})')
    return TimeGrid(T=float(T), dt=T / n_steps, n_steps=n_steps)


class StreamId(NamedTuple):
    role: str
    replication: int = 0
    particle: int = 0


def _role_code(role: str) -> int:
    return int.from_bytes(hashlib.sha256(role.encode('utf-8')).digest()[:4], 'little')


@dataclass(frozen=True)
class NoisePlan:
    master_seed: int = 0

    def __post_init__(self):
        if type(self.master_seed) != int or self.master_seed < 0:
            raise ValueError(f'master_seed must be a non-negative int, received: {self.master_seed!r}')

    def seed_sequence(self, stream: StreamId) -> np.random.SeedSequence:
        if stream.replication < 0 or stream.particle < 0:
            raise ValueError(f'stream indices must be non-negative, received: {stream}')
        spawn_key = (_role_code(stream.role), stream.replication, stream.particle)
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=spawn_key)

    def generator(self, stream: StreamId) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence(stream)))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    grid: TimeGrid
    values: np.ndarray      # (n_steps + 1, k)
    stream: StreamId

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def sample_brownian(grid: TimeGrid, dim: int, plan: NoisePlan, stream: StreamId) -> BrownianPath:
    '''Standard Brownian motion on the grid, values[0] = 0, deterministic given (plan, stream).'''
    if type(dim) != int or dim < 1:
        raise ValueError(f'dim must be a positive int, received: {dim!r}')
    rng = plan.generator(stream)
    increments = np.sqrt(grid.dt) * rng.standard_normal((grid.n_steps, dim))
    values = np.vstack([np.zeros((1, dim)), np.cumsum(increments, axis=0)])
    return BrownianPath(grid=grid, values=values, stream=stream)


class IncrementStream:
    """
    On-demand N(0, dt) increments for a population of particles.
    Particle i draws from its own stream (role, replication, i); draws are buffered in chunks of
    steps so that no full path is ever stored.
    """

    def __init__(self, plan: NoisePlan, role: str, replication: int, n_particles: int, dim: int, dt: float):
        if n_particles < 1 or dim < 1:
            raise ValueError(f'n_particles and dim must be >= 1, received: {n_particles}, {dim}')
        self.n_particles = n_particles
        self.dim = dim
        self.scale = np.sqrt(dt)
        self.generators: List[np.random.Generator] = [
            plan.generator(StreamId(role, replication, i)) for i in range(n_particles)
        ]
        self.chunk_steps = int(np.clip(NOISE_BUFFER_FLOATS // (n_particles * dim), MIN_CHUNK_STEPS, MAX_CHUNK_STEPS))
        self._buffer = np.empty((self.chunk_steps, n_particles, dim))
        self._cursor = self.chunk_steps

    def _refill(self):
        for i, rng in enumerate(self.generators):
            self._buffer[:, i, :] = rng.standard_normal((self.chunk_steps, self.dim))
        self._buffer *= self.scale
        self._cursor = 0

    def next(self) -> np.ndarray:
        '''(n_particles, dim) increments for one step.'''
        if self._cursor == self.chunk_steps:
            self._refill()
        step = self._buffer[self._cursor]
        self._cursor += 1
        return step
