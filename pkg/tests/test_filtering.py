import math

import numpy as np
import pytest

from mvfilter.dynamics_utils import SlowPath, simulate_averaged
from mvfilter.errors import WeightUnderflowError
from mvfilter.ergodics_utils import compute_Fbar, sample_invariant
from mvfilter.filtering_utils import (TEST_FUNCTIONS, ExperimentReport, averaged_filter, check_test_function_bound,
                                      constant_function, effective_sample_size, filter_convergence_experiment,
                                      get_test_function, inverse_moment_diagnostic, ks_log_weight,
                                      martingale_diagnostic, particle_filter, systematic_resample)
from mvfilter.model_utils import silence_observations
from mvfilter.noise_utils import NoisePlan, StreamId, make_grid, sample_brownian


@pytest.fixture
def brownian(plan):
    return sample_brownian(make_grid(1.0, 1e-2), 1, plan, StreamId('obs'))


def as_path(W) -> SlowPath:
    return SlowPath(grid_obs=W.grid, values=W.values, noise_ref=W.stream)


def test_log_weight_of_zero_and_constant_observation(brownian):
    Y = as_path(brownian)
    n = Y.grid_obs.n_steps
    np.testing.assert_array_equal(ks_log_weight(np.zeros(n), Y), np.zeros(n + 1))

    c = 0.7
    expected = c * Y.values[:, 0] - 0.5 * c ** 2 * Y.grid_obs.times
    np.testing.assert_allclose(ks_log_weight(np.full(n, c), Y), expected, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        ks_log_weight(np.zeros(n - 1), Y)


def test_effective_sample_size():
    assert effective_sample_size(np.zeros(50)) == pytest.approx(50.0)
    assert effective_sample_size(np.array([0.0, -800.0, -800.0])) == pytest.approx(1.0)
    assert effective_sample_size(np.log([0.5, 0.5, 0.0 + 1e-300])) == pytest.approx(2.0)


def test_systematic_resampling():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(systematic_resample(np.full(4, 0.25), rng), np.arange(4))
    np.testing.assert_array_equal(systematic_resample(np.array([0.0, 1.0, 0.0, 0.0]), rng), np.ones(4, dtype=int))
    indices = systematic_resample(np.array([0.5, 0.25, 0.25, 0.0]), rng)
    assert np.bincount(indices, minlength=4).tolist() == [2, 1, 1, 0]


def test_constant_test_function_is_estimated_exactly(model, plan, brownian):
    F = constant_function(0.3)
    output = particle_filter(model, 0.25, as_path(brownian), 64, 16, [F], plan)
    assert np.all(output.estimates[F.name] == 0.3)
    assert output.log_weights.shape == (64, 101)
    assert np.all((output.ess_path >= 1.0 - 1e-9) & (output.ess_path <= 64 + 1e-9))


def test_silent_model_leaves_weights_uniform(model, plan, brownian):
    silent = silence_observations(model)
    output = particle_filter(silent, 0.25, as_path(brownian), 32, 16, [TEST_FUNCTIONS['F1']], plan)
    np.testing.assert_array_equal(output.final_log_weights, np.zeros(32))
    np.testing.assert_allclose(output.log_normalizer_path, 0.0, atol=1e-12)
    np.testing.assert_allclose(output.ess_path, 32.0)
    assert output.resampled_at == []


def test_filter_is_deterministic(model, brownian):
    Y = as_path(brownian)
    first = particle_filter(model, 0.25, Y, 16, 8, [TEST_FUNCTIONS['F2']], NoisePlan(6))
    second = particle_filter(model, 0.25, Y, 16, 8, [TEST_FUNCTIONS['F2']], NoisePlan(6), record_weights=False)
    np.testing.assert_array_equal(first.estimates['F2'], second.estimates['F2'])
    np.testing.assert_array_equal(first.final_log_weights, second.final_log_weights)
    assert second.log_weights is None


def test_resampling_triggers_on_degenerate_weights(model, plan, brownian):
    steep = model.with_obs(lambda x, mu: 3.0 * x, obs_bound=30.0, lip_h=3.0, suffix='-steep')
    output = particle_filter(steep, 0.25, as_path(brownian), 100, 8, [TEST_FUNCTIONS['F3']], plan, resample=True)
    assert output.resampled_at
    assert np.all(np.isfinite(output.estimates['F3']))
    assert np.all(np.abs(output.estimates['F3']) <= TEST_FUNCTIONS['F3'].bound + 1e-12)


def test_filter_preconditions(model, plan, brownian):
    Y = as_path(brownian)
    with pytest.raises(ValueError):
        particle_filter(model, 0.25, Y, 0, 8, [], plan)
    with pytest.raises(ValueError):
        particle_filter(model, 0.25, Y, 8, 1, [], plan)


def test_weight_underflow_is_reported(model, plan):
    grid = make_grid(1.0, 1e-2)
    violent = model.with_obs(lambda x, mu: np.full((x.shape[0], 1), 1e200), obs_bound=1e200, lip_h=0.0, suffix='-huge')
    Y = SlowPath(grid_obs=grid, values=np.zeros((grid.n_steps + 1, 1)), noise_ref=None)
    with np.errstate(all='ignore'):
        with pytest.raises(WeightUnderflowError):
            particle_filter(violent, 0.25, Y, 4, 4, [], plan)


def test_averaged_filter_identity(model, plan):
    nu = sample_invariant(model, n_samples=1024, plan=plan, n_chains=32)
    W = sample_brownian(make_grid(1.0, 1e-3), 1, plan, StreamId('obs'))
    Ybar = simulate_averaged(0.6, W)
    for F in TEST_FUNCTIONS.values():
        Fbar = compute_Fbar(F, nu).value[0]
        output = averaged_filter(0.6, Fbar, Ybar)
        np.testing.assert_allclose(output.pi, Fbar, rtol=1e-14, atol=0)


def test_averaged_filter_normalizer():
    grid = make_grid(2.0, 0.01)
    drift_only = SlowPath(grid_obs=grid, values=grid.times[:, None].copy(), noise_ref=None)
    output = averaged_filter(1.0, 2.0, drift_only)
    np.testing.assert_allclose(output.Lambda, np.exp(grid.times / 2), rtol=1e-13)
    np.testing.assert_allclose(output.P, 2.0 * np.exp(grid.times / 2), rtol=1e-13)

    silent = averaged_filter(1.0, 0.0, drift_only)
    np.testing.assert_array_equal(silent.pi, np.zeros(grid.n_steps + 1))
    with pytest.raises(ValueError):
        averaged_filter([1.0, 2.0], 0.0, drift_only)


def test_martingale_is_exact_without_observation(model, plan):
    estimate = martingale_diagnostic(silence_observations(model), 0.5, 200, 1.0, plan, dt_obs=0.01, M_law=8)
    assert estimate.value == 1.0
    assert estimate.stderr == 0.0


def test_martingale_with_constant_observation(model, plan, constant_obs):
    estimate = martingale_diagnostic(constant_obs(model, 0.5), 0.5, 20_000, 1.0, plan, dt_obs=0.01, M_law=8)
    assert abs(estimate.value - 1.0) < 4 * estimate.stderr
    # Lognormal weights: Var Lambda_T = e^{c^2 T} - 1.
    assert estimate.stderr == pytest.approx(math.sqrt(math.expm1(0.25) / 20_000), rel=0.1)


def test_inverse_moment_without_observation_is_one(model, plan):
    estimate = inverse_moment_diagnostic(silence_observations(model), 0.25, 2.0, 3, plan, N=4, T=0.5, dt_obs=0.01, M_law=4)
    assert estimate.value == pytest.approx(1.0, abs=1e-12)


def test_inverse_moment_matches_lognormal_oracle(model, plan, constant_obs):
    c, r, T = 0.5, 2.0, 1.0
    estimate = inverse_moment_diagnostic(constant_obs(model, c), 0.25, r, 400, plan, N=4, T=T, dt_obs=0.01, M_law=4)
    oracle = math.exp(r * (r - 1) * c ** 2 * T / 2)
    assert abs(estimate.value - oracle) < 4 * estimate.stderr


def test_inverse_moment_preconditions(model, plan):
    with pytest.raises(ValueError):
        inverse_moment_diagnostic(model, 0.25, 1.0, 10, plan)
    with pytest.raises(ValueError):
        inverse_moment_diagnostic(model, 0.25, 2.0, 1, plan)


def test_bundled_test_functions_respect_their_bounds():
    for F in TEST_FUNCTIONS.values():
        assert check_test_function_bound(F, 2_000, 5.0, seed=0).passed
    assert TEST_FUNCTIONS['F3'].bound == pytest.approx(1 / math.sqrt(2 * math.e))
    with pytest.raises(ValueError):
        get_test_function('F9')


def test_convergence_experiment_preconditions(model, plan):
    F = constant_function(0.0)
    with pytest.raises(ValueError):
        filter_convergence_experiment(model, [0.5, 0.25], 0.1, F, 4, 4, 2, plan, Fbar=0.0)
    with pytest.raises(ValueError):
        filter_convergence_experiment(model, [0.5, 0.25, 0.125], 0.2, F, 4, 4, 2, plan, T=0.1, Fbar=0.0)
    with pytest.raises(ValueError):
        filter_convergence_experiment(model, [0.5, 0.25, 0.125], 0.1, F, 4, 4, 1, plan, Fbar=0.0)


def test_convergence_experiment_of_a_constant_function(model, plan):
    F = constant_function(0.3)
    report = filter_convergence_experiment(model, [0.5, 0.25, 0.125], 0.1, F, 4, 4, 2, plan, dt_obs=0.01, Fbar=0.3)
    np.testing.assert_array_equal(report.mean_sq_gap, np.zeros(3))
    assert report.floor == 0.0
    assert math.isnan(report.fitted_slope)
    assert report.limit_reached()
    assert report.rows()[0] == (0.5, 0.0, 0.0, 2, 0.3)


def test_limit_reached_against_the_control_floor():
    report = ExperimentReport(eps_grid=np.array([0.5, 0.25, 0.125]), mean_sq_gap=np.array([0.010, 0.009, 0.0085]),
                              stderr=np.full(3, 0.0005), n_reps=200, Fbar=0.1, test_function='F1',
                              floor=0.0082, floor_stderr=0.0004)
    assert report.limit_reached()
    assert report.monotone_violations() == 0
    report.floor = 0.001
    assert not report.limit_reached()


@pytest.mark.slow
def test_martingale_at_full_size(model, plan):
    estimate = martingale_diagnostic(model, 0.1, 100_000, 1.0, plan)
    assert abs(estimate.value - 1.0) < 4 * estimate.stderr


@pytest.mark.slow
def test_filter_limit_at_full_size(model, plan):
    eps_grid = [2.0 ** -4, 2.0 ** -6, 2.0 ** -8, 2.0 ** -10]
    report = filter_convergence_experiment(model, eps_grid, 1.0, get_test_function('F1'), 2000, 1000, 200, plan)
    assert report.monotone_violations() == 0
    assert report.limit_reached()


def test_stderr_halves_when_particles_double(model):
    # Law ensemble grows with N so the plug-in law tightens along with the particle cloud.
    Y = as_path(sample_brownian(make_grid(0.5, 1e-2), 1, NoisePlan(40), StreamId('obs')))

    def mean_stderr(N):
        return np.mean([particle_filter(model, 0.25, Y, N, N, [TEST_FUNCTIONS['F1']], NoisePlan(seed),
                                        record_weights=False).stderrs['F1'][-1]
                        for seed in range(20)])

    assert 1.3 <= mean_stderr(100) / mean_stderr(200) <= 1.7


def test_estimate_agrees_with_a_larger_rerun(model):
    Y = as_path(sample_brownian(make_grid(0.5, 1e-2), 1, NoisePlan(41), StreamId('obs')))
    small = particle_filter(model, 0.25, Y, 256, 1024, [TEST_FUNCTIONS['F1']], NoisePlan(5), record_weights=False)
    large = particle_filter(model, 0.25, Y, 1024, 1024, [TEST_FUNCTIONS['F1']], NoisePlan(5), record_weights=False)
    gap = abs(small.estimates['F1'][-1] - large.estimates['F1'][-1])
    assert small.stderrs['F1'][-1] > 0
    assert gap <= 5 * math.hypot(small.stderrs['F1'][-1], large.stderrs['F1'][-1])


def test_constant_function_has_zero_stderr(model, plan, brownian):
    F = constant_function(-1.25)
    output = particle_filter(model, 0.25, as_path(brownian), 32, 8, [F], plan, record_weights=False)
    assert np.all(output.stderrs[F.name] == 0.0)
