import pytest
from ptp_csoe.async_runner import AsyncExperimentRunner
from ptp_csoe.runner import ExperimentRunner


@pytest.fixture
def make_async_runner(tmp_path, tiny_scenario):
    def _make_async_runner(threads: int = 2):
        return AsyncExperimentRunner(
            'detection',
            scenario=tiny_scenario,
            trials=3,
            seed=11,
            out_dir=tmp_path / 'async',
            threads=threads
        )

    return _make_async_runner


@pytest.mark.asyncio
async def test_matches_sync_runner(make_async_runner, tiny_scenario, tmp_path):
    runner = make_async_runner()
    rows = await runner.run()
    sync = ExperimentRunner('detection', scenario=tiny_scenario, trials=3, seed=11, out_dir=tmp_path / 'sync')
    sync.run()

    assert runner.is_async
    assert len(rows) == 4 * 6
    assert runner.results_path.read_bytes() == sync.results_path.read_bytes()


@pytest.mark.asyncio
async def test_single_worker(make_async_runner):
    runner = make_async_runner(threads=1)
    rows = await runner.run()

    assert runner.threads == 1
    assert {row.config_point for row in rows} == {'P=20', 'P=60', 'P=100', 'P=200'}
    assert (runner.trace_dir / 'detection_P=60_trial0.csv').exists()
