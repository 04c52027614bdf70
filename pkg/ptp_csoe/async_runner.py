import asyncio
from pathlib import Path
from typing import Iterable
from ptp_csoe._base_runner import _BaseRunner, _run_trial, ResultRow
from ptp_csoe.types import ExperimentName, ExperimentInfo, ScenarioInfo, Estimator, TrialResult


class AsyncExperimentRunner(_BaseRunner):
    """
    Async version of ExperimentRunner. Trials run in worker threads, at most threads of them at a time
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
        super().__init__(experiment, scenario, trials, seed, estimators, out_dir, threads, True)

    async def _run_point(self, point_index: int, semaphore: asyncio.Semaphore) -> list[TrialResult]:
        arguments = self._trial_arguments(point_index)

        async def trial(trial_id: int) -> TrialResult:
            async with semaphore:
                return await asyncio.to_thread(_run_trial, *arguments[:-1], trial_id, arguments[-1])

        return list(await asyncio.gather(*(trial(trial_id) for trial_id in range(self.spec.trials))))

    async def run(self) -> list[ResultRow]:
        """
        Runs every trial of every configuration point, then writes results.csv
        :return: Same rows as ExperimentRunner.run for the same experiment and seed
        """
        self._prepare()
        semaphore = asyncio.Semaphore(self.threads)
        rows = []

        for point_index in range(len(self.spec.points)):
            results = await self._run_point(point_index, semaphore)
            rows.extend(self.aggregate(point_index, results))

        self.write_results(rows)
        return rows
