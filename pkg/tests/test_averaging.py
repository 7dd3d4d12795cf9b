import numpy as np
import pytest

from mvfilter.averaging_utils import RateReport, check_eps_grid, fit_rate, rate_experiment, sup_error_one_path
from mvfilter.noise_utils import NoisePlan, make_grid

EPS_GRID = [2.0 ** -k for k in range(2, 6)]


def test_fit_rate_recovers_exact_power_laws():
    eps = np.array([2.0 ** -k for k in range(4, 11)])
    assert abs(fit_rate(eps, 3.0 * eps) - 1.0) < 1e-12
    assert fit_rate(eps, 0.2 * np.sqrt(eps)) == pytest.approx(0.5, abs=1e-12)


def test_fit_rate_rejects_non_positive_errors():
    with pytest.raises(ValueError):
        fit_rate([0.5, 0.25], [1.0, 0.0])
    with pytest.raises(ValueError):
        fit_rate([0.5], [1.0])


def test_eps_grid_validation():
    np.testing.assert_array_equal(check_eps_grid(EPS_GRID, 4), EPS_GRID)
    with pytest.raises(ValueError):
        check_eps_grid(EPS_GRID[:3], 4)
    with pytest.raises(ValueError):
        check_eps_grid(EPS_GRID[::-1], 4)
    with pytest.raises(ValueError):
        check_eps_grid([1.0, 0.5, 0.25, 0.125], 4)


def test_averaged_drift_gives_zero_error(model, plan, constant_obs):
    grid = make_grid(1.0, 1e-2)
    constant = constant_obs(model, 0.4)
    for eps in (0.25, 2.0 ** -6):
        assert sup_error_one_path(constant, eps, 1.0, grid, 8, 0.4, plan, rep=0) == 0.0


def test_constant_mismatch_accumulates_linearly(model, plan, constant_obs):
    grid = make_grid(2.0, 1e-2)
    error = sup_error_one_path(constant_obs(model, 0.4), 0.1, 2.0, grid, 8, 0.1, plan, rep=0)
    assert error == pytest.approx((0.3 * 2.0) ** 2, rel=1e-10)


def test_sup_error_respects_pathwise_bound(model, plan):
    grid = make_grid(1.0, 1e-2)
    for rep in range(3):
        error = sup_error_one_path(model, 0.1, 1.0, grid, 32, 0.6, plan, rep=rep)
        assert 0.0 <= error <= (2.0 * model.obs_bound * 1.0) ** 2


def test_sup_error_requires_matching_horizon(model, plan):
    with pytest.raises(ValueError):
        sup_error_one_path(model, 0.1, 2.0, make_grid(1.0, 1e-2), 8, 0.6, plan, rep=0)


def test_rate_experiment_preconditions(model, plan):
    with pytest.raises(ValueError):
        rate_experiment(model, EPS_GRID[:3], 0.25, 16, 2, plan, hbar=0.6)
    with pytest.raises(ValueError):
        rate_experiment(model, EPS_GRID, 0.25, 16, 1, plan, hbar=0.6)


def test_rate_experiment_of_constant_mismatch_is_flat(model, plan, constant_obs):
    report = rate_experiment(constant_obs(model, 0.5), EPS_GRID, 0.5, 8, 2, plan, hbar=0.25, dt_obs=0.005)
    np.testing.assert_allclose(report.mean_sq_sup_error, (0.25 * 0.5) ** 2, rtol=1e-10)
    assert report.fitted_slope == pytest.approx(0.0, abs=1e-8)
    assert report.bound_violations == 0


def test_rate_experiment_report(model):
    report = rate_experiment(model, EPS_GRID, 0.25, 32, 3, NoisePlan(4), hbar=0.6, dt_obs=0.0025)
    assert isinstance(report, RateReport)
    assert report.used_in_fit.dtype == bool and report.used_in_fit.shape == (4,)
    assert np.all(report.mean_sq_sup_error >= 0)
    assert np.isfinite(report.fitted_slope)
    assert report.bound == pytest.approx(0.25)
    assert [row[3] for row in report.rows()] == [3] * 4

    again = rate_experiment(model, EPS_GRID, 0.25, 32, 3, NoisePlan(4), hbar=0.6, dt_obs=0.0025)
    np.testing.assert_array_equal(report.mean_sq_sup_error, again.mean_sq_sup_error)


def test_monotone_violations_counts_increases():
    report = RateReport(eps_grid=np.array([0.5, 0.25, 0.125]), mean_sq_sup_error=np.array([1.0, 2.0, 0.5]),
                        stderr=np.full(3, 0.1), fitted_slope=1.0, n_reps=10, hbar=np.zeros(1), floor=0.0,
                        used_in_fit=np.ones(3, dtype=bool), bound=4.0)
    assert report.monotone_violations() == 1


@pytest.mark.slow
def test_example_rate_at_full_size(model):
    eps_grid = [2.0 ** -k for k in range(4, 11)]
    report = rate_experiment(model, eps_grid, 1.0, 1000, 200, NoisePlan(0))
    assert report.monotone_violations() == 0
    assert report.fitted_slope >= 0.4
    assert report.mean_sq_sup_error[-1] < report.mean_sq_sup_error[0]
