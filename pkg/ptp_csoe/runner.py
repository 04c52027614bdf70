from pathlib import Path
from typing import Iterable
from joblib import Parallel, delayed
from ptp_csoe._base_runner import _BaseRunner, _run_trial, ResultRow
from ptp_csoe.types import ExperimentName, ExperimentInfo, ScenarioInfo, Estimator


class ExperimentRunner(_BaseRunner):
    """
    Runs a Monte Carlo experiment, spreading the trials of each configuration point over joblib workers.
    Every trial draws from its own seed, so results do not depend on the number of workers
    """

    def __init__(
            self,
            experiment: ExperimentName | ExperimentInfo = 'convergence',
            scenario: ScenarioInfo | None = None,
            trials: int | None = None,
            seed: int | None = None,
            estimators: Iterable[Estimator] | None = None,
            out_dir: str | Path = 'out',
            threads: int = 1
    ):
        """
        :param experiment: Name of a preset experiment or a custom one represented as type ExperimentInfo
        :param scenario: Base scenario replacing the one of the experiment
        :param trials: Trials per configuration point, overriding the experiment
        :param seed: Root seed, overriding the experiment
        :param estimators: Estimators to run, overriding the experiment
        :param out_dir: Directory receiving results.csv and the trace/ and pdf/ folders
        :param threads: Number of joblib workers
        """
        super().__init__(experiment, scenario, trials, seed, estimators, out_dir, threads, False)

    def run(self) -> list[ResultRow]:
        """
        Runs every trial of every configuration point, then writes results.csv
        :return: One row per configuration point, estimator and metric
        """
        self._prepare()
        spec = self.spec
        rows = []

        with Parallel(n_jobs=self.threads) as parallel:
            for point_index in range(len(spec.points)):
                arguments = self._trial_arguments(point_index)
                results = parallel(delayed(_run_trial)(*arguments[:-1], trial_id, arguments[-1])
                                   for trial_id in range(spec.trials))
                rows.extend(self.aggregate(point_index, list(results)))

        self.write_results(rows)
        return rows
