import copy
import csv
import math
import pytest
from scipy.stats import norm
from ptp_csoe.runner import ExperimentRunner
from ptp_csoe._base_runner import RESULT_COLUMNS, _run_trial
from ptp_csoe.queue_sim import EmpiricalPdf


@pytest.fixture
def make_runner(tmp_path, tiny_scenario):
    def _make_runner(experiment='convergence', estimators=('sage',), trials=3, threads=1, out='out'):
        return ExperimentRunner(
            experiment,
            scenario=tiny_scenario,
            trials=trials,
            seed=5,
            estimators=estimators,
            out_dir=tmp_path / out,
            threads=threads
        )

    return _make_runner


def _read(path):
    with open(path) as file:
        return list(csv.DictReader(file))


def test_sage_rows(make_runner):
    runner = make_runner('detection')
    rows = runner.run()

    assert len(rows) == 4 * 6
    assert {row.config_point for row in rows} == {'P=20', 'P=60', 'P=100', 'P=200'}
    metrics = {row.metric for row in rows}
    assert metrics == {'nrmse_offset', 'nrmse_skew', 'p_miss', 'p_false_alarm', 'mean_iterations', 'failure_rate'}
    failure = [row for row in rows if row.metric == 'failure_rate']
    assert all(row.estimator == 'all' and row.trials == 3 for row in failure)

    table = _read(runner.results_path)
    assert tuple(table[0]) == RESULT_COLUMNS
    assert len(table) == len(rows)
    assert (runner.trace_dir / 'detection_P=20_trial0.csv').exists()


def test_deterministic_across_workers(make_runner):
    serial = make_runner(threads=1, out='serial')
    parallel = make_runner(threads=2, out='parallel')
    serial.run()
    parallel.run()

    assert serial.results_path.read_bytes() == parallel.results_path.read_bytes()


def test_genie_only(tiny_scenario):
    light = dict(tiny_scenario, traffic=dict(tiny_scenario['traffic'], load=0.2))
    result = _run_trial('convergence', 0, 'base', light, ('genie',), 5, 0)

    assert result.error is None
    assert result.sage is None
    assert result.genie.skew == pytest.approx(1.01, abs=0.05)
    assert abs(result.genie.offset) < 10e-6
    assert result.truth.skew == 1.01


def test_genie_from_saved_pdf(make_runner, tiny_scenario):
    path = make_runner().simulate_delays([0.2], samples=20_000, bin_width=0.5e-6)[0]
    traffic = dict(tiny_scenario['traffic'], load=0.2, pdf_path=str(path))
    result = _run_trial('convergence', 0, 'base', dict(tiny_scenario, traffic=traffic), ('genie',), 5, 0)

    assert result.error is None
    assert result.genie.skew == pytest.approx(1.01, abs=0.05)


def test_trial_failure_recorded(tiny_scenario):
    broken = dict(tiny_scenario, components=40)
    result = _run_trial('convergence', 0, 'base', broken, ('sage',), 5, 0)

    assert result.failed
    assert result.error.startswith('ValueError')


def test_invalid_scenario_recorded(tiny_scenario):
    broken = dict(tiny_scenario, tau_us=[4.0, 4.0, 0.0])
    result = _run_trial('convergence', 0, 'base', broken, ('sage', 'genie'), 5, 0)

    assert result.failed
    assert result.error.startswith('ModelViolationError')
    assert result.truth is None and result.eta == ()


def test_scenario_seed_overrides_experiment_seed(tiny_scenario):
    seeded = dict(tiny_scenario, seed=11)
    first = _run_trial('convergence', 0, 'base', seeded, ('sage',), 5, 0)
    second = _run_trial('convergence', 0, 'base', seeded, ('sage',), 6, 0)
    unseeded = _run_trial('convergence', 0, 'base', tiny_scenario, ('sage',), 6, 0)

    assert first.error is None
    assert first.sage == second.sage
    assert first.sage != unseeded.sage


def test_failure_rate_row(tmp_path, tiny_scenario):
    runner = ExperimentRunner(
        {'name': 'custom', 'trials': 2, 'seed': 1, 'estimators': ['sage'], 'scenario': dict(tiny_scenario, P_t=1)},
        out_dir=tmp_path
    )
    rows = runner.run()
    failure = next(row for row in rows if row.metric == 'failure_rate')

    assert failure.value == 1.0
    assert math.isnan(next(row for row in rows if row.metric == 'nrmse_offset').value)


def test_simulate_delays(make_runner):
    runner = make_runner()
    paths = runner.simulate_delays([0.2, 0.6], samples=5000, bin_width=0.5e-6)

    assert [path.name for path in paths] == ['load_20.txt', 'load_60.txt']
    pdf = EmpiricalPdf.load(paths[1])
    assert pdf.sample_count == 5000
    assert pdf.mean == pytest.approx(33.75e-6, rel=0.05)


def test_invalid_runner(tiny_scenario):
    with pytest.raises(TypeError):
        ExperimentRunner(42)
    with pytest.raises(ValueError):
        ExperimentRunner('convergence', scenario=tiny_scenario, threads=0)


@pytest.mark.slow
def test_more_exchanges_reduce_error(mc_trials, tmp_path):
    if not mc_trials:
        pytest.skip('PTP_CSOE_MC_TRIALS is not set')

    info = dict(ExperimentRunner.get_experiment_map()['convergence'], sweep={'axis': 'P', 'values': [20, 200]})
    rows = ExperimentRunner(info, trials=mc_trials, estimators=['sage'], out_dir=tmp_path, threads=4).run()
    offset = {row.config_point: row.value for row in rows if row.metric == 'nrmse_offset'}
    skew = {row.config_point: row.value for row in rows if row.metric == 'nrmse_skew'}
    failures = [row.value for row in rows if row.metric == 'failure_rate']

    assert offset['P=200'] < offset['P=20']
    assert skew['P=200'] < skew['P=20']
    assert max(failures) <= 0.05


def _preset_rows(name, mc_trials, tmp_path, estimators, values=None):
    info = copy.deepcopy(ExperimentRunner.get_experiment_map()[name])
    if values is not None:
        info['sweep']['values'] = values
    return ExperimentRunner(info, trials=mc_trials, estimators=estimators, out_dir=tmp_path, threads=4).run()


def _metric(rows, estimator, metric):
    return {row.config_point: row for row in rows if row.estimator == estimator and row.metric == metric}


@pytest.mark.slow
def test_genie_bounds_sage(mc_trials, tmp_path):
    if not mc_trials:
        pytest.skip('PTP_CSOE_MC_TRIALS is not set')

    rows = _preset_rows('convergence', mc_trials, tmp_path, ['sage', 'genie'], [20, 60, 100])
    width = 2 * norm.ppf(0.975)

    for which in ('offset', 'skew'):
        sage_rows = _metric(rows, 'sage', f'nrmse_{which}')
        genie_rows = _metric(rows, 'genie', f'nrmse_{which}')
        assert set(sage_rows) == {'P=20', 'P=60', 'P=100'}
        for point, sage_row in sage_rows.items():
            genie_row = genie_rows[point]
            std_error = math.hypot(sage_row.ci_hi - sage_row.ci_lo, genie_row.ci_hi - genie_row.ci_lo) / width
            assert genie_row.value <= sage_row.value + 2 * std_error


@pytest.mark.slow
def test_detection_at_many_exchanges(mc_trials, tmp_path):
    if not mc_trials:
        pytest.skip('PTP_CSOE_MC_TRIALS is not set')

    rows = _preset_rows('detection', mc_trials, tmp_path, ['sage'], [200])

    assert _metric(rows, 'sage', 'p_miss')['P=200'].value < 0.01
    assert _metric(rows, 'sage', 'p_false_alarm')['P=200'].value < 0.01


@pytest.mark.slow
def test_genie_error_independent_of_clock(mc_trials, tmp_path):
    if not mc_trials:
        pytest.skip('PTP_CSOE_MC_TRIALS is not set')

    rows = _preset_rows('clock_cases', mc_trials, tmp_path, ['genie'])

    for which in ('offset', 'skew'):
        cases = _metric(rows, 'genie', f'nrmse_{which}').values()
        assert len(cases) == 3
        assert max(row.ci_lo for row in cases) <= min(row.ci_hi for row in cases)


@pytest.mark.slow
def test_mixture_order_robust(mc_trials, tmp_path):
    if not mc_trials:
        pytest.skip('PTP_CSOE_MC_TRIALS is not set')

    rows = _preset_rows('mixture_order', mc_trials, tmp_path, ['sage'])

    for which in ('offset', 'skew'):
        values = [row.value for row in _metric(rows, 'sage', f'nrmse_{which}').values()]
        assert len(values) == 3
        assert max(values) / min(values) - 1 < 0.2
