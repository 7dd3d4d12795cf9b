"""
Command-line entry point: `mvfilter <command> [--config FILE] [flags]`.

Exit codes: 0 on success, 1 on a numerical abort (blow-up, weight underflow), 2 on an invalid
configuration, whether parsing or a downstream precondition rejects it. Logs go to stderr; the check-hypotheses table goes to stdout.
"""
import sys
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from .averaging_utils import rate_experiment
from .config_utils import parse_config
from .context import RunContext
from .dynamics_utils import ensemble_statistics, simulate_averaged, simulate_fast_ensemble, simulate_observation
from .ergodics_utils import (compute_Fbar, compute_hbar, contraction_experiment, hbar_decay_experiment,
                             moment_bound_experiment, sample_invariant, w2_decay_experiment, InvariantSample)
from .errors import ConfigError, NumericalAbortError
from .filtering_utils import filter_convergence_experiment, get_test_function, inverse_moment_diagnostic, martingale_diagnostic
from .logger_utils import initialize_logger
from .model_utils import ModelSpec, check_hypotheses, get_model, silence_observations
from .noise_utils import NoisePlan, StreamId, make_grid, sample_brownian
from .report_utils import derived_path, write_csv, write_report
from .worker_utils import close_executor, initialize_executor

CURVE_HEADER = ['t', 'observed', 'bound', 'stderr']
INVARIANT_CHAINS = 64
CONTRACTION_REPS = 100


def _wall_time(context: RunContext) -> float:
    return (datetime.now(timezone.utc) - context.run_start_time).total_seconds()


def _invariant_sample(context: RunContext, model: ModelSpec) -> InvariantSample:
    '''nu-hat with the configured burn-in, size and thinning; frozen step = kappa, matching the fast scheme.'''
    n_samples = context.invariant_samples or 4096
    n_chains = INVARIANT_CHAINS if n_samples >= 100 * INVARIANT_CHAINS and n_samples % INVARIANT_CHAINS == 0 else 1
    return sample_invariant(model, burn_in=context.burn_in, n_samples=n_samples, thinning=context.thinning,
                            plan=context.plan, dt=context.kappa, n_chains=n_chains)


def _columns(prefix: str, dim: int) -> List[str]:
    return [f'{prefix}{i}' for i in range(dim)]


def run_check_hypotheses(context: RunContext, model: ModelSpec) -> int:
    reports = check_hypotheses(model, context.n_pairs, context.radius, context.seed)
    print(f'model={model.name} L1={model.lip_b_sigma:g} L2={model.lip_h:g} beta={model.dissipativity:g} alpha={model.alpha:g}')
    for report in reports:
        status = 'pass' if report.passed else 'FAIL'
        constant = '' if report.empirical_constant is None else f' C={report.empirical_constant:.6g}'
        print(f'{report.hypothesis:<12} {status}  n={report.n_pairs}  worst_margin={report.worst_margin:.3e}{constant}')
    if context.output_path:
        rows = [(r.hypothesis, r.n_pairs, r.worst_margin, r.passed, r.worst_raw_margin, r.empirical_constant) for r in reports]
        header = ['hypothesis', 'n_pairs', 'worst_margin', 'passed', 'worst_raw_margin', 'empirical_constant']
        write_report(context, context.output_path, header, rows, extra={'beta': model.dissipativity})
    return sum(not r.passed for r in reports)


def run_simulate(context: RunContext, model: ModelSpec) -> int:
    epsilon = context.eps_grid[0]
    grid = make_grid(context.T, context.coarse_step)
    ensemble = simulate_fast_ensemble(model, epsilon, grid, context.particles, context.kappa, context.plan,
                                      track=(0,), role='simulate/signal')
    W = sample_brownian(grid, model.dim_obs, context.plan, StreamId('simulate/obs'))
    Y = simulate_observation(model, ensemble, W, particle=0)
    if context.h_zero:
        hbar = np.zeros(model.dim_obs)
    else:
        hbar = compute_hbar(model, _invariant_sample(context, model)).value
    Ybar = simulate_averaged(hbar, W)

    times = grid.times[:, None]
    write_report(context, context.output_path, ['t'] + _columns('y', model.dim_obs), np.hstack([times, Y.values]).tolist(),
                 extra={'epsilon': epsilon, 'hbar': hbar.tolist()})
    write_csv(context, derived_path(context.output_path, 'W'), ['t'] + _columns('w', model.dim_obs), np.hstack([times, W.values]).tolist())
    write_csv(context, derived_path(context.output_path, 'Ybar'), ['t'] + _columns('ybar', model.dim_obs), np.hstack([times, Ybar.values]).tolist())
    signal_rows = [(t, float(ensemble.states[k, 0, 0]), mean, variance, M)
                   for k, (t, mean, variance, M) in enumerate(ensemble_statistics(ensemble))]
    write_csv(context, derived_path(context.output_path, 'signal'), ['t', 'x', 'ensemble_mean', 'ensemble_variance', 'M'], signal_rows)
    return 0


def run_ergodics(context: RunContext, model: ModelSpec) -> int:
    nu = _invariant_sample(context, model)
    hbar = compute_hbar(model, nu)
    curves = {
        'w2': w2_decay_experiment(model, context.x0, context.T, nu, context.plan, n_reps=context.reps, dt=context.dt),
        'contraction': contraction_experiment(model, context.x0, 0.0, context.T, context.dt, CONTRACTION_REPS, context.plan),
        'hbar': hbar_decay_experiment(model, context.x0, context.T, nu, context.plan, n_reps=context.reps, dt=context.dt),
        'moment': moment_bound_experiment(model, context.x0, context.T, context.dt, context.reps, context.plan),
    }
    summary = {
        name: {'fitted_exponent': curve.fitted_exponent, 'violations': curve.violations()}
        for name, curve in curves.items()
    }
    summary['hbar'].update({'value': hbar.value.tolist(), 'stderr': hbar.stderr.tolist()})

    context.logger.log_stats(summary)
    write_report(context, context.output_path, CURVE_HEADER, curves['w2'].rows(), extra=summary)
    for name in ('contraction', 'hbar', 'moment'):
        write_csv(context, derived_path(context.output_path, name), CURVE_HEADER, curves[name].rows())
    write_csv(context, derived_path(context.output_path, 'nu'), _columns('x', model.dim_signal), nu.cloud.points.tolist(), 'cloud')
    return sum(item['violations'] for item in summary.values())


def run_averaging_rate(context: RunContext, model: ModelSpec) -> int:
    hbar = compute_hbar(model, _invariant_sample(context, model))
    report = rate_experiment(model, context.eps_grid, context.T, context.particles, context.reps, context.plan,
                             hbar=hbar.value, hbar_se=float(np.linalg.norm(hbar.stderr)), dt_obs=context.coarse_step,
                             kappa=context.kappa, context=context)
    rows = report.rows() + [('fitted_slope', report.fitted_slope, None, None)]
    extra = {
        'fitted_slope': report.fitted_slope,
        'hbar': report.hbar.tolist(),
        'floor': report.floor,
        'used_in_fit': [bool(u) for u in report.used_in_fit],
        'monotone_violations': report.monotone_violations(),
        'bound': report.bound,
    }
    context.logger.log_stats(extra)
    write_report(context, context.output_path, ['epsilon', 'mean_sq_sup_error', 'stderr', 'n_reps'], rows, extra=extra)
    return report.bound_violations


def run_filter_convergence(context: RunContext, model: ModelSpec) -> int:
    F = get_test_function(context.test_function)
    Fbar = float(compute_Fbar(F, _invariant_sample(context, model)).value[0])
    report = filter_convergence_experiment(model, context.eps_grid, context.t_eval or context.T, F, context.particles, context.law_particles,
                                           context.reps, context.plan, T=context.T, dt_obs=context.coarse_step,
                                           kappa=context.kappa, Fbar=Fbar, resample=context.resample, context=context)
    extra = {
        'floor': report.floor,
        'floor_stderr': report.floor_stderr,
        'fitted_slope': report.fitted_slope,
        'limit_reached': report.limit_reached(),
        'monotone_violations': report.monotone_violations(),
    }
    context.logger.log_stats(extra)
    write_report(context, context.output_path, ['epsilon', 'mean_sq_gap', 'stderr', 'n_reps', 'Fbar'], report.rows(), extra=extra)
    return 0


def run_martingale(context: RunContext, model: ModelSpec) -> int:
    rows = []
    for epsilon in context.eps_grid:
        estimate = martingale_diagnostic(model, epsilon, context.particles, context.T, context.plan, dt_obs=context.coarse_step,
                                         M_law=context.law_particles, kappa=context.kappa)
        rows.append((epsilon, context.particles, context.T, estimate.value, estimate.stderr))
    write_report(context, context.output_path, ['epsilon', 'N', 'T', 'mean_weight', 'stderr'], rows)
    return sum(abs(value - 1.0) > 4.0 * stderr for _, _, _, value, stderr in rows)


def run_inverse_moment(context: RunContext, model: ModelSpec) -> int:
    rows = []
    for epsilon in context.eps_grid:
        estimate = inverse_moment_diagnostic(model, epsilon, context.r, context.reps, context.plan, N=context.particles,
                                             T=context.T, dt_obs=context.coarse_step, M_law=context.law_particles,
                                             kappa=context.kappa, context=context)
        rows.append((epsilon, context.r, context.reps, estimate.value, estimate.stderr))
    write_report(context, context.output_path, ['epsilon', 'r', 'n_reps', 'estimate', 'stderr'], rows)
    return 0


COMMAND_HANDLERS: Dict[str, Callable[[RunContext, ModelSpec], int]] = {
    'check-hypotheses':   run_check_hypotheses,
    'simulate':           run_simulate,
    'ergodics':           run_ergodics,
    'averaging-rate':     run_averaging_rate,
    'filter-convergence': run_filter_convergence,
    'martingale':         run_martingale,
    'inverse-moment':     run_inverse_moment,
}


def run(context: RunContext) -> int:
    """
    Runs the configured command and writes its outputs. Returns the exit code; numerical aborts
    are logged and mapped to 1.
    """
    model = get_model(context.model_name, context.sigma, context.x0)
    if context.h_zero:
        model = silence_observations(model)
    if context.plan is None:
        context.plan = NoisePlan(context.seed)

    try:
        violations = COMMAND_HANDLERS[context.command](context, model)
    except NumericalAbortError as e:
        context.logger.log_numerical_error(message=str(e), experiment=context.command)
        context.exit_code = 1
        return context.exit_code
    except ValueError as e:
        # Out-of-range values that only a downstream precondition catches.
        context.logger.log_invalid_config(message=str(e), key=getattr(e, 'key', None), experiment=context.command)
        context.exit_code = 2
        return context.exit_code

    context.logger.log_experiment(context.command, _wall_time(context), context.reps, context.seed, bound_violations=int(violations))
    context.exit_code = 0
    return context.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    try:
        context = parse_config(argv)
        initialize_executor(context)
    except ConfigError as e:
        print(f'mvfilter: {e}', file=sys.stderr)
        return 2

    initialize_logger(context)
    context.plan = NoisePlan(context.seed)
    try:
        return run(context)
    finally:
        close_executor(context)


if __name__ == '__main__':
    sys.exit(main())
