import numpy as np
import pytest
from ptp_csoe.clock_model import (PeriodicSchedule, generate_timestamps, timestamps_from_delays, prev_window_residuals,
                                  exact_prev_estimates, noisy_prev_estimates, sample_queuing_delays)
from ptp_csoe.exceptions import ModelViolationError
from ptp_csoe.types import Scenario, PathConfig, ClockParams, PrevEstimates


def test_zero_delay_exchange(make_scenario):
    scenario = make_scenario(num_paths=1, asymmetries=(0.0,), skew=1.01, offset=1e-6, delay=1e-6)
    records = timestamps_from_delays(scenario, [[0.0]], [[0.0]], [[0.0]], [[30e-6]])

    assert records.t2[0, 0] == pytest.approx(2.01e-6, rel=1e-12)
    assert records.t3[0, 0] == pytest.approx(30.29e-6, rel=1e-12)


def test_asymmetry_shifts_forward_timestamp(make_scenario):
    asymmetric = make_scenario(asymmetries=(4e-6, 0.0, 0.0))
    symmetric = make_scenario(asymmetries=(0.0, 0.0, 0.0))
    zeros = np.zeros((3, 1))
    t1, t4 = np.zeros((3, 1)), np.full((3, 1), 30e-6)

    shifted = timestamps_from_delays(asymmetric, zeros, zeros, t1, t4)
    plain = timestamps_from_delays(symmetric, zeros, zeros, t1, t4)

    assert shifted.t2[0, 0] - plain.t2[0, 0] == pytest.approx(4.04e-6, rel=1e-9)
    assert shifted.t2[1:, 0] == pytest.approx(plain.t2[1:, 0])
    assert shifted.t3 == pytest.approx(plain.t3)


def test_default_schedule():
    t1, t4 = PeriodicSchedule()(2, 4)

    assert t1.shape == (2, 4)
    assert t1[1] == pytest.approx([0.0, 60e-6, 120e-6, 180e-6])
    assert t4 - t1 == pytest.approx(np.full((2, 4), 30e-6))


def test_reconstruction(make_scenario):
    scenario = make_scenario(exchanges=40)
    rng = np.random.default_rng(3)
    source = lambda path, direction, size, generator: generator.uniform(1e-6, 40e-6, size)

    w1, w2 = sample_queuing_delays(scenario, source, np.random.default_rng(3))
    t1, t4 = PeriodicSchedule()(scenario.num_paths, scenario.exchanges_per_path)
    records = timestamps_from_delays(scenario, w1, w2, t1, t4)
    residuals = prev_window_residuals(records, exact_prev_estimates(scenario))

    assert residuals.fwd == pytest.approx(w1, rel=1e-12, abs=1e-17)
    assert residuals.rev == pytest.approx(w2, rel=1e-12, abs=1e-17)
    assert generate_timestamps(scenario, source, rng=rng).t2 == pytest.approx(records.t2, rel=1e-15)


def test_zero_delay_residuals(make_scenario):
    scenario = make_scenario(num_paths=1, asymmetries=(0.0,))
    t1, t4 = PeriodicSchedule()(1, 5)
    records = timestamps_from_delays(scenario, np.zeros((1, 5)), np.zeros((1, 5)), t1, t4)
    residuals = prev_window_residuals(records, exact_prev_estimates(scenario))

    assert np.abs(residuals.fwd).max() < 1e-17
    assert np.abs(residuals.rev).max() < 1e-17


def test_affine_covariance(make_scenario):
    scenario = make_scenario(skew=1.0, offset=0.0)
    moved = make_scenario(skew=1.5, offset=3e-6)
    rng = np.random.default_rng(5)
    w1, w2 = rng.uniform(0, 20e-6, (2, 3, 10))
    t1, t4 = PeriodicSchedule()(3, 10)

    base = timestamps_from_delays(scenario, w1, w2, t1, t4)
    records = timestamps_from_delays(moved, w1, w2, t1, t4)

    assert records.t2 == pytest.approx(1.5 * base.t2 + 3e-6, rel=1e-13)
    assert records.t3 == pytest.approx(1.5 * base.t3 + 3e-6, rel=1e-13)


def test_non_positive_delay_rejected(make_scenario):
    scenario = make_scenario()
    source = lambda path, direction, size, generator: np.where(np.arange(size) == 2, 0.0, 1e-6)

    with pytest.raises(ModelViolationError, match='exchange 2'):
        generate_timestamps(scenario, source, rng=np.random.default_rng(0))


def test_invalid_previous_skew(make_scenario):
    with pytest.raises(ValueError):
        PrevEstimates(clock=ClockParams(skew=0.0, offset=0.0), fwd_delays=[1e-6], rev_delays=[1e-6])


def test_scenario_validation():
    clock = ClockParams(skew=1.01, offset=1e-6)
    asymmetric = PathConfig(det_delay=1e-6, asymmetry=4e-6, is_asymmetric=True)

    with pytest.raises(ModelViolationError):
        Scenario(paths=(asymmetric, PathConfig(det_delay=1e-6)), clock=clock, exchanges_per_path=10)
    with pytest.raises(ModelViolationError):
        Scenario(
            paths=(PathConfig(det_delay=1e-6, asymmetry=1e-6, is_asymmetric=True), PathConfig(det_delay=1e-6),
                   PathConfig(det_delay=1e-6)),
            clock=clock,
            exchanges_per_path=10
        )
    with pytest.raises(ValueError):
        PathConfig(det_delay=1e-6, asymmetry=1e-6)


def test_noisy_previous_estimates(make_scenario):
    scenario = make_scenario()
    estimates = [noisy_prev_estimates(scenario, 1e-7, 1e-4, np.random.default_rng(seed)) for seed in range(400)]
    offsets = np.array([estimate.clock.offset for estimate in estimates])
    skews = np.array([estimate.clock.skew for estimate in estimates])

    assert offsets.mean() == pytest.approx(1e-6, abs=3e-8)
    assert offsets.std() == pytest.approx(1e-7, rel=0.15)
    assert skews.std() == pytest.approx(1e-4, rel=0.15)
    assert estimates[0].fwd_delays.shape == (3,)
