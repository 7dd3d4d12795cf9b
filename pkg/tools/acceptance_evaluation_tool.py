'''
Current state of the Acceptance Evaluation Tool:
    It is a reusable python script that runs every acceptance criterion of mvfilter at full size on the bundled
    example model (sigma=1) and prints, for each criterion:
        - Criterion
        - Passed
        - Key numbers (observed values against their oracle or bound)
        - Time Taken
    Results are appended to acceptance_evaluation_results.txt in the working directory.
    Set MVFILTER_THREADS (or a .env file) to run the replications in parallel.
Future Improvements:
    Although I am not planning to implement these at present, these are some improvements to consider for future:
        - Run a single criterion from the command line.
        - Compare against the results of the previous run and flag drifts.
'''



import math
import traceback
from datetime import datetime

import numpy as np
from dotenv import load_dotenv
from scipy.integrate import quad
from scipy.stats import norm

from mvfilter.averaging_utils import rate_experiment
from mvfilter.context import RunContext
from mvfilter.dynamics_utils import simulate_averaged, simulate_frozen
from mvfilter.ergodics_utils import (compute_Fbar, compute_hbar, contraction_experiment, hbar_decay_experiment,
                                     sample_invariant, w2_decay_experiment)
from mvfilter.filtering_utils import (TEST_FUNCTIONS, averaged_filter, filter_convergence_experiment, get_test_function,
                                      martingale_diagnostic)
from mvfilter.measure_utils import EmpiricalMeasure, wasserstein2_1d, wasserstein2_assignment
from mvfilter.model_utils import example_model
from mvfilter.noise_utils import NoisePlan, StreamId, make_grid, sample_brownian
from mvfilter.report_utils import render_csv
from mvfilter.worker_utils import close_executor, initialize_executor

RESULTS_FILE = 'acceptance_evaluation_results.txt'
RATE_EPS = [2.0 ** -k for k in range(4, 11)]
FILTER_EPS = [2.0 ** -k for k in (4, 6, 8, 10)]



def ou_moment_oracle(context, model):
    lines, passed = [], True
    for t in (0.5, 1.0, 2.0, 4.0):
        final = simulate_frozen(model, make_grid(t, 1e-3), 1.0, context.plan, n_paths=100_000, record=False)
        squared = final[:, 0] ** 2
        se = squared.std(ddof=1) / math.sqrt(squared.size)
        exact = math.exp(-t) + (1.0 - math.exp(-t))
        passed &= abs(squared.mean() - exact) <= 3 * se
        lines.append(f't={t:g}: E|X|^2={squared.mean():.5f} exact={exact:.5f} se={se:.2e}')
    return passed, lines


def contraction_exactness(context, model):
    dt = 1e-3
    curve = contraction_experiment(model, 1.0, 0.0, 4.0, dt, 1, context.plan)
    lines, passed = [], True
    for t in (1.0, 2.0, 4.0):
        ratio = curve.observed[int(round(t / dt))] / math.exp(-t)
        passed &= 1 - 10 * dt <= ratio <= 1 + 10 * dt
        lines.append(f't={t:g}: ratio={ratio:.6f}')
    return passed, lines


def decay_exponent_limit(name, model):
    '''W2 must decay at least like e^{-0.9 t}; the hbar gap at least like e^{-beta t}.'''
    return -0.9 if name == 'w2' else -model.dissipativity


def decay_verdict(name, curve, model):
    return curve.violations() == 0 and curve.fitted_exponent <= decay_exponent_limit(name, model)


def decay_bounds(context, model):
    nu = sample_invariant(model, n_samples=4096, plan=context.plan)
    lines, passed = [], True
    for name, curve in (('w2', w2_decay_experiment(model, 2.0, 8.0, nu, context.plan)),
                        ('hbar', hbar_decay_experiment(model, 2.0, 8.0, nu, context.plan))):
        passed &= decay_verdict(name, curve, model)
        lines.append(f'{name}: violations={curve.violations()} fitted_exponent={curve.fitted_exponent:.3f}')
    return passed, lines


def averaging_rate(context, model):
    report = rate_experiment(model, RATE_EPS, 1.0, 1000, 200, context.plan, context=context)
    passed = report.monotone_violations() == 0 and report.fitted_slope >= 0.4
    lines = [f'eps={e:.6g}: error={m:.4e} se={s:.1e}' for e, m, s, _ in report.rows()]
    lines.append(f'fitted_slope={report.fitted_slope:.3f} floor={report.floor:.2e}')
    return passed, lines, render_csv(['epsilon', 'mean_sq_sup_error', 'stderr', 'n_reps'], report.rows())


def averaged_filter_identity(context, model):
    nu = sample_invariant(model, n_samples=4096, plan=context.plan)
    hbar = compute_hbar(model, nu).value
    Ybar = simulate_averaged(hbar, sample_brownian(make_grid(1.0, 1e-3), 1, context.plan, StreamId('acceptance/obs')))
    lines, passed = [], True
    for F in TEST_FUNCTIONS.values():
        Fbar = compute_Fbar(F, nu).value[0]
        gap = np.max(np.abs(averaged_filter(hbar, Fbar, Ybar).pi - Fbar)) / max(abs(Fbar), 1e-300)
        passed &= gap <= 1e-14
        lines.append(f'{F.name}: Fbar={Fbar:.6f} max relative gap={gap:.1e}')
    return passed, lines


def filter_limit(context, model):
    report = filter_convergence_experiment(model, FILTER_EPS, 1.0, get_test_function('F1'), 2000, 1000, 200,
                                           context.plan, context=context)
    passed = report.monotone_violations() == 0 and report.limit_reached()
    lines = [f'eps={e:.6g}: gap={m:.4e} se={s:.1e}' for e, m, s, _, _ in report.rows()]
    lines.append(f'Fbar={report.Fbar:.6f} control floor={report.floor:.4e} se={report.floor_stderr:.1e}')
    return passed, lines, render_csv(['epsilon', 'mean_sq_gap', 'stderr', 'n_reps', 'Fbar'], report.rows())


def martingale_check(context, model):
    estimate = martingale_diagnostic(model, 0.1, 100_000, 1.0, context.plan)
    return abs(estimate.value - 1.0) <= 4 * estimate.stderr, [f'mean weight={estimate.value:.5f} se={estimate.stderr:.1e}']


def w2_cross_validation(context, model):
    rng = np.random.default_rng(context.seed)
    worst = 0.0
    for _ in range(100):
        mu = EmpiricalMeasure.uniform(rng.normal(size=64))
        nu = EmpiricalMeasure.uniform(rng.normal(loc=rng.uniform(-2, 2), scale=rng.uniform(0.2, 3), size=64))
        worst = max(worst, abs(wasserstein2_1d(mu, nu) - wasserstein2_assignment(mu, nu)))
    return worst <= 1e-10, [f'worst disagreement={worst:.1e}']


def hbar_oracle(context, model):
    nu = sample_invariant(model, n_samples=4096, plan=context.plan)
    estimate = compute_hbar(model, nu)
    scale = math.sqrt(2.0)
    exact, _ = quad(lambda z: 2.0 * math.sin(z) * norm.pdf(z, scale=scale), 0.0, 12.0 * scale, limit=400)
    gap = abs(estimate.value[0] - exact)
    return gap <= 4 * estimate.stderr[0], [f'hbar={estimate.value[0]:.5f} quadrature={exact:.5f} se={estimate.stderr[0]:.1e}']



def write_results(criterion: str, passed: bool, lines: list, start_time: datetime):
    summary = [
        f'Criterion:       {criterion}',
        f'Passed:          {passed}',
        *[f'                 {line}' for line in lines],
        f"Time Taken:      {str(datetime.now() - start_time).split('.')[0]}",
    ]
    print('\n' + '\n'.join(summary))
    with open(RESULTS_FILE, 'a', encoding='utf-8') as f:
        f.write('\n'.join(summary) + '\n\n\n\n')



def main():

    # Create results file.
    with open(RESULTS_FILE, 'w') as f:
        f.write('')

    load_dotenv()
    context = RunContext()
    context.seed = 0
    initialize_executor(context)
    model = example_model(sigma=1.0, x0=0.0)

    criteria = [
        ('1. OU moment oracle', ou_moment_oracle),
        ('2. Contraction exactness', contraction_exactness),
        ('3. Decay bounds', decay_bounds),
        ('4. Averaging rate', averaging_rate),
        ('5. Averaged-filter identity', averaged_filter_identity),
        ('6. Filter limit', filter_limit),
        ('7. Martingale check', martingale_check),
        ('8. W2 cross-validation', w2_cross_validation),
        ('9. hbar oracle', hbar_oracle),
    ]

    csv_by_criterion = {}
    try:
        for criterion, evaluate in criteria:
            print(f'\n\nEvaluating: {criterion}')
            start_time = datetime.now()
            context.plan = NoisePlan(context.seed)
            try:
                passed, lines, *csv = evaluate(context, model)
                if csv:
                    csv_by_criterion[criterion] = csv[0]
            except Exception:
                passed, lines = False, traceback.format_exc().splitlines()
            write_results(criterion, bool(passed), lines, start_time)

        # Determinism: criteria 4 and 6 rerun with the same seed must give byte-identical CSVs.
        start_time = datetime.now()
        identical = []
        for criterion, evaluate in ((criteria[3][0], averaging_rate), (criteria[5][0], filter_limit)):
            context.plan = NoisePlan(context.seed)
            if criterion in csv_by_criterion:
                identical.append(evaluate(context, model)[2] == csv_by_criterion[criterion])
        write_results('10. Determinism', len(identical) == 2 and all(identical), [f'identical reruns: {identical}'], start_time)
    finally:
        close_executor(context)

    print('\nAll results saved!')

if __name__ == '__main__':
    main()
