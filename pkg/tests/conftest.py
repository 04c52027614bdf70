import numpy as np
import pytest
from dotenv import dotenv_values
from ptp_csoe.clock_model import generate_timestamps, prev_window_residuals, exact_prev_estimates
from ptp_csoe.gmm import GmmParams
from ptp_csoe.queue_sim import SwitchCascadeConfig, CascadeDelaySource
from ptp_csoe.types import Scenario, PathConfig, ClockParams, WindowData

dotenv_values = dotenv_values()


@pytest.fixture(scope="session")
def mc_trials():
    """
    Monte Carlo trials of the slow acceptance checks, 0 when they should be skipped
    """
    return int(dotenv_values.get('PTP_CSOE_MC_TRIALS') or 0)


@pytest.fixture(scope="session")
def make_scenario():
    def _make_scenario(
            num_paths: int = 3,
            exchanges: int = 50,
            asymmetries: tuple[float, ...] = (4e-6, 0.0, 0.0),
            skew: float = 1.01,
            offset: float = 1e-6,
            delay: float = 1e-6,
            prev_exchanges: int | None = None
    ) -> Scenario:
        paths = tuple(
            PathConfig(det_delay=delay, asymmetry=tau, is_asymmetric=tau != 0)
            for tau in list(asymmetries)[:num_paths]
        )
        return Scenario(
            paths=paths,
            clock=ClockParams(skew=skew, offset=offset),
            exchanges_per_path=exchanges,
            prev_window_exchanges=exchanges if prev_exchanges is None else prev_exchanges
        )

    return _make_scenario


@pytest.fixture(scope="session")
def cascade():
    return SwitchCascadeConfig()


@pytest.fixture(scope="session")
def make_window(cascade):
    def _make_window(scenario: Scenario, seed: int = 0, load: float = 0.6) -> WindowData:
        rng = np.random.default_rng(seed)
        source = CascadeDelaySource.uniform(cascade.with_load(load), scenario.num_paths)
        records = generate_timestamps(scenario, source, rng=rng)
        prev_records = generate_timestamps(scenario, source, rng=rng, num_exchanges=scenario.prev_window_exchanges)
        residuals = prev_window_residuals(prev_records, exact_prev_estimates(scenario))
        return WindowData(records=records, residuals=residuals)

    return _make_window


@pytest.fixture(scope="session")
def narrow_pdf():
    return GmmParams(weights=[0.6, 0.4], means=[20e-6, 26e-6], stds=[2e-6, 3e-6])


@pytest.fixture(scope="session")
def tiny_scenario():
    """
    Scenario small enough for end-to-end runs of both estimators
    """
    return {
        'N': 3,
        'P': 12,
        'phi': 1.01,
        'delta_us': 1.0,
        'd_us': 1.0,
        'tau_us': [4.0, 0.0, 0.0],
        'd_tau_us': 2.0,
        'components': 2,
        'traffic': {'model': 'tm1', 'load': 0.6, 'pdf_samples': 20_000, 'pdf_bin_width_us': 0.5},
        'grid': {'phi_range': [0.9, 1.1], 'phi_step': 0.002, 'linear_range_us': [-10.0, 10.0],
                 'linear_step_us': 0.1},
        'init_grid': {'phi_range': [0.9, 1.1], 'phi_step': 0.001, 'linear_range_us': [-10.0, 10.0],
                      'linear_step_us': 0.1}
    }
