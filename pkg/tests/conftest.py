import numpy as np
import pytest

from mvfilter.model_utils import ModelSpec, example_model
from mvfilter.noise_utils import NoisePlan


@pytest.fixture
def model():
    return example_model(sigma=1.0, x0=0.0)


@pytest.fixture
def plan():
    return NoisePlan(master_seed=12345)


@pytest.fixture
def constant_obs():
    '''Factory: the given model with h(x, mu) = c.'''
    def build(base: ModelSpec, c: float) -> ModelSpec:
        def obs(x, mu):
            return np.full((np.shape(x)[0], base.dim_obs), float(c))
        return base.with_obs(obs, obs_bound=max(abs(c), 1e-12), lip_h=0.0, suffix='-const')
    return build


@pytest.fixture
def standard_ou():
    '''b(x) = -x, sigma = sqrt(2): stationary law N(0, 1).'''
    sigma = np.array([[np.sqrt(2.0)]])
    return ModelSpec(
        name='standard_ou',
        dim_signal=1,
        dim_noise_fast=1,
        dim_obs=1,
        drift=lambda x: -x,
        diffusion=lambda x: np.broadcast_to(sigma, (x.shape[0], 1, 1)),
        obs=lambda x, mu: np.zeros((x.shape[0], 1)),
        lip_b_sigma=1.0,
        lip_h=0.0,
        dissipativity=2.0,
        obs_bound=1.0,
        initial_signal=0.0,
        constant_diffusion=sigma,
    )
