import math

import numpy as np
import pytest

from mvfilter.dynamics_utils import (ensemble_statistics, micro_steps_per_coarse, ou_law_oracle, simulate_averaged,
                                     simulate_fast_ensemble, simulate_frozen, simulate_observation, time_rescaling_check)
from mvfilter.errors import BlowUpError
from mvfilter.model_utils import ModelSpec, linear_ou_model, silence_observations
from mvfilter.noise_utils import NoisePlan, StreamId, make_grid, sample_brownian


def test_micro_step_count():
    assert micro_steps_per_coarse(1e-3, 2.0 ** -10, 0.01) == 103
    assert micro_steps_per_coarse(1e-3, 0.1, 0.01) == 1
    assert micro_steps_per_coarse(1e-2, 0.5, 0.01) == 2


def test_fast_ensemble_matches_ou_law(model, plan):
    start = model.with_initial(1.0)
    grid = make_grid(0.5, 0.005)
    ensemble = simulate_fast_ensemble(start, 0.1, grid, 20_000, 0.01, plan)
    final = ensemble.states[-1, :, 0]
    mean, variance = ou_law_oracle(1.0, 1.0, 0.1, 0.5)
    assert mean == pytest.approx(math.exp(-2.5))
    assert abs(final.mean() - mean) < 4 * math.sqrt(variance / final.size) + 1e-3
    assert abs(final.var(ddof=1) - variance) < 4 * math.sqrt(2.0 / final.size) * variance + 5e-3


def test_frozen_second_moment_oracle(model, plan):
    grid = make_grid(2.0, 1e-2)
    paths = simulate_frozen(model, grid, 1.0, plan, n_paths=20_000)
    for t in (0.5, 1.0, 2.0):
        squared = paths[int(round(t / grid.dt)), :, 0] ** 2
        exact = math.exp(-t) + (1.0 - math.exp(-t))
        assert abs(squared.mean() - exact) < 4 * squared.std() / math.sqrt(squared.size) + 0.01


def test_frozen_paths_record_or_return_final_states(model, plan):
    grid = make_grid(1.0, 0.1)
    recorded = simulate_frozen(model, grid, 0.0, plan, n_paths=3)
    final = simulate_frozen(model, grid, 0.0, plan, n_paths=3, record=False)
    assert recorded.shape == (11, 3, 1)
    np.testing.assert_array_equal(recorded[-1], final)


def test_zero_coefficients_freeze_the_initial_state(plan):
    frozen = ModelSpec(
        name='still', dim_signal=1, dim_noise_fast=1, dim_obs=1,
        drift=lambda x: np.zeros_like(x),
        diffusion=lambda x: np.zeros((x.shape[0], 1, 1)),
        obs=lambda x, mu: np.zeros((x.shape[0], 1)),
        lip_b_sigma=0.0, lip_h=0.0, dissipativity=1.0, obs_bound=1.0,
        initial_signal=lambda rng, size: rng.uniform(-1, 1, size=size),
    )
    ensemble = simulate_fast_ensemble(frozen, 0.25, make_grid(1.0, 0.1), 16, 0.01, plan)
    for states in ensemble.states:
        np.testing.assert_array_equal(states, ensemble.states[0])


def test_constant_observation_matches_averaged_path(model, plan, constant_obs):
    constant = constant_obs(model, 0.3)
    grid = make_grid(1.0, 1e-2)
    ensemble = simulate_fast_ensemble(constant, 0.05, grid, 8, 0.01, plan, track=(0,))
    W = sample_brownian(grid, 1, plan, StreamId('obs'))
    Y = simulate_observation(constant, ensemble, W)
    Ybar = simulate_averaged(0.3, W)
    np.testing.assert_allclose(Y.values, Ybar.values, rtol=0, atol=1e-12)


def test_silent_observation_is_the_brownian_path(model, plan):
    silent = silence_observations(model)
    grid = make_grid(1.0, 1e-2)
    ensemble = simulate_fast_ensemble(silent, 0.05, grid, 8, 0.01, plan, track=(0,))
    W = sample_brownian(grid, 1, plan, StreamId('obs'))
    np.testing.assert_array_equal(simulate_observation(silent, ensemble, W).values, W.values)


def test_untracked_particle_uses_left_point_drift(model, plan):
    grid = make_grid(0.5, 1e-2)
    ensemble = simulate_fast_ensemble(model, 0.5, grid, 8, 0.01, plan, track=(0,))
    W = sample_brownian(grid, 1, plan, StreamId('obs'))
    tracked = simulate_observation(model, ensemble, W, particle=0)
    untracked = simulate_observation(model, ensemble, W, particle=1)
    assert tracked.values.shape == untracked.values.shape == (51, 1)
    # |h| <= 1, so both drifts stay inside the pathwise envelope.
    assert np.all(np.abs(untracked.values - W.values) <= grid.times[:, None] + 1e-12)


def test_ensembles_are_deterministic(model):
    grid = make_grid(0.2, 1e-2)
    first = simulate_fast_ensemble(model, 0.1, grid, 32, 0.01, NoisePlan(5), track=(0, 3))
    second = simulate_fast_ensemble(model, 0.1, grid, 32, 0.01, NoisePlan(5), track=(0, 3))
    np.testing.assert_array_equal(first.states, second.states)
    np.testing.assert_array_equal(first.drift_integrals, second.drift_integrals)


def test_fast_ensemble_preconditions(model, plan):
    grid = make_grid(1.0, 0.1)
    with pytest.raises(ValueError):
        simulate_fast_ensemble(model, 0.0, grid, 8, 0.01, plan)
    with pytest.raises(ValueError):
        simulate_fast_ensemble(model, 1.5, grid, 8, 0.01, plan)
    with pytest.raises(ValueError):
        simulate_fast_ensemble(model, 0.5, grid, 8, 0.2, plan)
    with pytest.raises(ValueError):
        simulate_fast_ensemble(model, 0.5, grid, 1, 0.01, plan)
    with pytest.raises(ValueError):
        simulate_fast_ensemble(model, 0.5, grid, 8, 0.01, plan, track=(8,))


def explosive_model() -> ModelSpec:
    return ModelSpec(
        name='explosive', dim_signal=1, dim_noise_fast=1, dim_obs=1,
        drift=lambda x: 1e3 * x,
        diffusion=lambda x: np.ones((x.shape[0], 1, 1)),
        obs=lambda x, mu: np.zeros((x.shape[0], 1)),
        lip_b_sigma=0.0, lip_h=0.0, dissipativity=1.0, obs_bound=1.0,
        initial_signal=1.0, constant_diffusion=np.ones((1, 1)),
    )


def test_blow_up_is_reported(plan):
    explosive = explosive_model()
    with np.errstate(over='ignore', invalid='ignore'):
        with pytest.raises(BlowUpError) as info:
            simulate_fast_ensemble(explosive, 1.0, make_grid(10.0, 0.1), 4, 0.01, plan)
    assert info.value.process == 'signal'
    assert 0 < info.value.time <= 10.0


def test_frozen_blow_up_reports_the_first_non_finite_step(plan):
    grid = make_grid(100.0, 0.1)
    with np.errstate(over='ignore', invalid='ignore'):
        with pytest.raises(BlowUpError) as info:
            simulate_frozen(explosive_model(), grid, 1.0, plan, n_paths=3, record=False)
    assert info.value.process == 'frozen'
    # |x| grows about 101-fold per step, so floats overflow after roughly 150 steps.
    assert 10.0 < info.value.time < 20.0


def test_ou_oracle_rejects_other_models():
    with pytest.raises(ValueError):
        ou_law_oracle(1.0, 0.0, 0.1, 1.0, model=linear_ou_model(1.0, 0.0))
    assert ou_law_oracle(2.0, 0.0, 0.1, 1e6)[1] == pytest.approx(4.0)


def test_ensemble_statistics_rows(model, plan):
    grid = make_grid(0.1, 0.05)
    rows = ensemble_statistics(simulate_fast_ensemble(model, 0.5, grid, 10, 0.01, plan))
    assert len(rows) == 3
    assert rows[0] == (0.0, 0.0, 0.0, 10)


def test_time_rescaling(model, plan):
    result = time_rescaling_check(model, 0.1, 0.2, 4000, plan)
    fast, frozen = result['fast'], result['frozen']
    assert abs(fast['mean'] - frozen['mean']) < 4 * math.hypot(fast['mean_se'], frozen['mean_se'])
    assert abs(fast['variance'] - frozen['variance']) < 4 * math.hypot(fast['variance_se'], frozen['variance_se'])
    assert fast['variance'] == pytest.approx(1 - math.exp(-2.0), abs=0.1)
