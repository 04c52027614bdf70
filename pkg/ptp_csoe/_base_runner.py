import copy
import csv
import logging
import math
import numpy as np
from abc import ABC, abstractmethod
from functools import lru_cache
from pathlib import Path
from time import perf_counter
from typing import ClassVar, NamedTuple, cast, Iterable
from ptp_csoe import sage
from ptp_csoe.clock_model import (generate_timestamps, prev_window_residuals, exact_prev_estimates,
                                  noisy_prev_estimates)
from ptp_csoe.config import (validate_experiment_info, validate_scenario_info, experiment_spec_from_info,
                             scenario_from_info, delay_source_from_info, schedule_from_info, grid_from_info,
                             init_config_from_info, cascade_from_info, _per_path)
from ptp_csoe.genie import GenieInputs, estimate
from ptp_csoe.initialization import initialize
from ptp_csoe.metrics import normalized_errors, nrmse, bootstrap_ci, normal_ci, detection_rates
from ptp_csoe.queue_sim import SwitchCascadeConfig, EmpiricalPdf, sample_delays, build_empirical_pdf, CANONICAL_LOADS
from ptp_csoe.types import (ExperimentName, ExperimentInfo, ExperimentSpec, ScenarioInfo, TrafficInfo, Estimator,
                            ClockParams, TrialResult, WindowData)
from ptp_csoe.utils import _in_literal, to_seconds

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ('experiment', 'config_point', 'estimator', 'metric', 'value', 'ci_lo', 'ci_hi', 'trials')
_PDF_STREAM = 1588
_BOOTSTRAP_STREAM = 8261


class ResultRow(NamedTuple):
    experiment: str
    config_point: str
    estimator: str
    metric: str
    value: float
    ci_lo: float
    ci_hi: float
    trials: int


_DEFAULT_SCENARIO: ScenarioInfo = {
    'N': 3,
    'P': 100,
    'phi': 1.01,
    'delta_us': 1.0,
    'd_us': 1.0,
    'tau_us': [4.0, 0.0, 0.0],
    'd_tau_us': 2.0,
    'traffic': {'model': 'tm1', 'load': 0.6},
    'components': 4,
    'kappa': 1e6
}


@lru_cache(maxsize=16)
def _delay_pdf(cascade: SwitchCascadeConfig, samples: int, bin_width: float, seed: int) -> EmpiricalPdf:
    rng = np.random.default_rng([seed, _PDF_STREAM])
    return build_empirical_pdf(sample_delays(cascade, samples, rng), bin_width)


def _genie_pdfs(traffic: TrafficInfo, num_paths: int, seed: int) -> tuple[tuple[EmpiricalPdf, EmpiricalPdf], ...]:
    if 'pdf_path' in traffic:
        pdf = EmpiricalPdf.load(traffic['pdf_path'])
        return ((pdf, pdf),) * num_paths

    samples = int(traffic.get('pdf_samples', 1_000_000))
    bin_width = to_seconds(traffic.get('pdf_bin_width_us', 0.1))
    pdfs = []
    for load in _per_path(traffic['load'], num_paths):
        pdf = _delay_pdf(cascade_from_info(traffic, load), samples, bin_width, seed)
        pdfs.append((pdf, pdf))
    return tuple(pdfs)


def _run_trial(
        experiment: str,
        point_index: int,
        label: str,
        info: ScenarioInfo,
        estimators: tuple[Estimator, ...],
        seed: int,
        trial_id: int,
        trace_dir: str | None = None
) -> TrialResult:
    """
    One Monte Carlo trial: a data window and a previous window, previous estimates and their residuals, then every
    requested estimator. Failures are recorded in the result instead of raised. A seed in the scenario replaces the
    experiment seed
    """
    root = info.get('seed', seed)
    rng = np.random.default_rng(np.random.SeedSequence([root, point_index, trial_id]))
    start = perf_counter()
    scenario = None
    fields = {}

    try:
        scenario = scenario_from_info(info)
        num_paths = scenario.num_paths
        schedule = schedule_from_info(info)
        records = generate_timestamps(scenario, delay_source_from_info(info['traffic'], num_paths), schedule, rng)
        prev_records = generate_timestamps(
            scenario,
            delay_source_from_info(info.get('prev_traffic', info['traffic']), num_paths),
            schedule,
            rng,
            scenario.prev_window_exchanges
        )

        noise = info.get('prev_noise')
        if noise is None:
            prev_estimates = exact_prev_estimates(scenario)
        else:
            prev_estimates = noisy_prev_estimates(scenario, to_seconds(noise['linear_std_us']), noise['skew_std'], rng)
        data = WindowData(records=records, residuals=prev_window_residuals(prev_records, prev_estimates))

        if 'sage' in estimators:
            result = sage.run(data, initialize(data, init_config_from_info(info)))
            fields.update(
                sage=result.state.clock,
                eta_hat=sage.classify_paths(result.state),
                iterations=result.iterations,
                converged=result.converged
            )
            if trace_dir is not None and trial_id == 0:
                sage.write_trace_csv(result.trace, Path(trace_dir) / f'{experiment}_{label}_trial0.csv')

        if 'genie' in estimators:
            inputs = GenieInputs(
                records=records,
                known_eta=scenario.eta,
                delay_pdfs=_genie_pdfs(info['traffic'], num_paths, root),
                grid=grid_from_info(info.get('grid'))
            )
            genie = estimate(inputs)
            fields['genie'] = ClockParams(skew=genie.skew, offset=genie.offset)

    except Exception as error:
        logger.warning(f'Trial {trial_id} of {experiment}/{label} failed: {type(error).__name__}: {error}')
        fields = {'error': f'{type(error).__name__}: {error}'}

    return TrialResult(
        trial_id=trial_id,
        truth=None if scenario is None else scenario.clock,
        eta=() if scenario is None else scenario.eta,
        wall_time=perf_counter() - start,
        **fields
    )


class _BaseRunner(ABC):
    __experiment_map: ClassVar[dict[ExperimentName, ExperimentInfo]] = {
        'convergence': {
            'name': 'convergence',
            'trials': 500,
            'seed': 1,
            'estimators': ['sage', 'genie'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {'axis': 'P', 'values': [20, 60, 100, 200]}
        },
        'load_sweep': {
            'name': 'load_sweep',
            'trials': 500,
            'seed': 2,
            'estimators': ['sage', 'genie'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {'axis': 'load', 'values': list(CANONICAL_LOADS)}
        },
        'clock_cases': {
            'name': 'clock_cases',
            'trials': 500,
            'seed': 3,
            'estimators': ['sage', 'genie'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {'axis': 'clock_cases', 'values': [[1.01, 1.0], [1.01, 0.0], [1.0, 0.0]]}
        },
        'detection': {
            'name': 'detection',
            'trials': 1000,
            'seed': 4,
            'estimators': ['sage'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {'axis': 'P', 'values': [20, 60, 100, 200]}
        },
        'mixture_order': {
            'name': 'mixture_order',
            'trials': 500,
            'seed': 5,
            'estimators': ['sage'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {'axis': 'components', 'values': [2, 4, 6]}
        },
        'prev_window_mismatch': {
            'name': 'prev_window_mismatch',
            'trials': 500,
            'seed': 6,
            'estimators': ['sage'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {'axis': 'prev_load', 'values': [0.5, 0.6, 0.7]}
        },
        'prev_estimate_noise': {
            'name': 'prev_estimate_noise',
            'trials': 500,
            'seed': 7,
            'estimators': ['sage'],
            'scenario': _DEFAULT_SCENARIO,
            'sweep': {
                'axis': 'prev_noise',
                'values': [[0.101 * k, 1.01e-4 * k] for k in range(1, 9)]
            }
        }
    }

    def __init__(
            self,
            experiment: ExperimentName | ExperimentInfo = 'convergence',
            scenario: ScenarioInfo | None = None,
            trials: int | None = None,
            seed: int | None = None,
            estimators: Iterable[Estimator] | None = None,
            out_dir: str | Path = 'out',
            threads: int = 1,
            is_async: bool = False
    ):
        info = copy.deepcopy(self.__validate_experiment(experiment))

        if scenario is not None:
            info['scenario'] = copy.deepcopy(validate_scenario_info(scenario))
        if trials is not None:
            info['trials'] = trials
        if seed is not None:
            info['seed'] = seed
        if estimators is not None:
            info['estimators'] = list(estimators)
        if threads < 1:
            raise ValueError(f'Need at least one worker thread, got {threads}')

        self._spec = experiment_spec_from_info(info)
        self._out_dir = Path(out_dir)
        self._threads = threads
        self.__is_async = is_async

    @property
    def spec(self) -> ExperimentSpec:
        return self._spec

    @property
    def out_dir(self) -> Path:
        return self._out_dir

    @property
    def threads(self) -> int:
        return self._threads

    @property
    def is_async(self) -> bool:
        return self.__is_async

    @classmethod
    def get_experiment_map(cls) -> dict[ExperimentName, ExperimentInfo]:
        return cls.__experiment_map

    @classmethod
    def __validate_experiment(cls, experiment: ExperimentName | ExperimentInfo) -> ExperimentInfo:
        if _in_literal(experiment, ExperimentName):
            return cls.__experiment_map[cast(ExperimentName, experiment)]
        if isinstance(experiment, dict):
            return validate_experiment_info(experiment)

        raise TypeError(f'Experiment must be represented as ExperimentInfo type or name of a preset experiment. '
                        f'You provided value: {experiment}')

    @property
    def trace_dir(self) -> Path:
        return self._out_dir / 'trace'

    @property
    def results_path(self) -> Path:
        return self._out_dir / 'results.csv'

    def _trial_arguments(self, point_index: int) -> tuple:
        spec = self._spec
        label, info = spec.points[point_index]
        trace_dir = str(self.trace_dir) if 'sage' in spec.estimators else None
        return spec.name, point_index, label, info, spec.estimators, spec.seed, trace_dir

    def _prepare(self):
        self.trace_dir.mkdir(parents=True, exist_ok=True)
        mode = 'async' if self.__is_async else f'{self._threads} worker(s)'
        logger.info(f'Running {self._spec.name}: {len(self._spec.points)} point(s) x {self._spec.trials} trial(s), '
                    f'{mode}')

    def aggregate(self, point_index: int, results: list[TrialResult]) -> list[ResultRow]:
        """
        Metrics of one configuration point: NRMSE of offset and skew with bootstrap intervals per estimator,
        detection rates and iteration count of SAGE, and the trial failure rate
        """
        spec = self._spec
        label = spec.points[point_index][0]
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, point_index, _BOOTSTRAP_STREAM]))
        rows = []

        def row(estimator: str, metric: str, value: float, low: float, high: float, count: int):
            rows.append(ResultRow(spec.name, label, estimator, metric, value, low, high, count))

        for estimator in spec.estimators:
            for which in ('offset', 'skew'):
                errors = normalized_errors(results, which, estimator)
                interval = bootstrap_ci(errors, spec.bootstrap_resamples, rng=rng)
                row(estimator, f'nrmse_{which}', nrmse(results, which, estimator), interval.low, interval.high,
                    errors.size)

        if 'sage' in spec.estimators:
            used = [result for result in results if not result.failed]
            rates = detection_rates(used)
            row('sage', 'p_miss', rates.p_miss, math.nan, math.nan, len(used))
            row('sage', 'p_false_alarm', rates.p_false_alarm, math.nan, math.nan, len(used))

            iterations = np.array([result.iterations for result in used], dtype=float)
            interval = normal_ci(iterations)
            value = float(iterations.mean()) if iterations.size else math.nan
            row('sage', 'mean_iterations', value, interval.low, interval.high, iterations.size)

        failures = sum(result.failed for result in results)
        row('all', 'failure_rate', failures / len(results), math.nan, math.nan, len(results))
        return rows

    def write_results(self, rows: list[ResultRow]) -> Path:
        path = self.results_path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(RESULT_COLUMNS)
            for row in rows:
                writer.writerow([row.experiment, row.config_point, row.estimator, row.metric, repr(row.value),
                                 repr(row.ci_lo), repr(row.ci_hi), row.trials])
        logger.info(f'Wrote {len(rows)} result rows to {path}')
        return path

    def simulate_delays(
            self,
            loads: Iterable[float] = CANONICAL_LOADS,
            samples: int = 1_000_000,
            bin_width: float = 1e-7
    ) -> list[Path]:
        """
        Writes one queuing-delay histogram per background load, using the cascade of the first configuration point

        :return: Paths of the written pdf/load_XX.txt files
        """
        spec = self._spec
        traffic = spec.points[0][1]['traffic']
        pdf_dir = self._out_dir / 'pdf'
        pdf_dir.mkdir(parents=True, exist_ok=True)
        paths = []

        for load in loads:
            pdf = _delay_pdf(cascade_from_info(traffic, load), samples, bin_width, spec.seed)
            path = pdf_dir / f'load_{round(load * 100):02d}.txt'
            pdf.save(path)
            paths.append(path)
            logger.info(f'Wrote delay pdf for load {load} to {path}')

        return paths

    @abstractmethod
    def run(self) -> list[ResultRow]:
        pass
