import numpy as np
import pytest
from ptp_csoe.exceptions import GridTooSmallError
from ptp_csoe.genie import IntegrationGrid
from ptp_csoe.gmm import GmmParams
from ptp_csoe.initialization import (InitConfig, single_direction_estimate, asymmetry_probability, initialize,
                                     per_path_line, PI_MARGIN)

LINE_GRID = IntegrationGrid(phi_range=(0.99, 1.01), phi_step=1e-5, linear_range=(-10e-6, 10e-6), linear_step=5e-9)
DELAY = GmmParams.single(1e-6, 2e-8)


@pytest.fixture(scope="module")
def clean_line():
    t_send = np.array([0.0, 1e-3])
    return t_send, (t_send + 1e-6) * 1.0003 + 2e-6


def test_two_clean_exchanges(clean_line):
    t_send, t_recv = clean_line
    line = single_direction_estimate(t_send, t_recv, DELAY, grid=LINE_GRID)

    assert line.skew == pytest.approx(1.0003, abs=1e-6)
    assert line.intercept == pytest.approx(2e-6, abs=1e-8)


def test_reverse_direction():
    t_send = np.array([30e-6, 90e-6, 150e-6, 1e-3])
    t_recv = (t_send - 1e-6) * 0.9995 - 1e-6
    line = single_direction_estimate(t_send, t_recv, DELAY, direction='reverse', grid=LINE_GRID)

    assert line.skew == pytest.approx(0.9995, abs=1e-6)
    assert line.intercept == pytest.approx(-1e-6, abs=1e-8)


def test_shift_covariance(clean_line):
    t_send, t_recv = clean_line
    shift = 700 * LINE_GRID.linear_step
    base = single_direction_estimate(t_send, t_recv, DELAY, grid=LINE_GRID)
    moved = single_direction_estimate(t_send, t_recv + shift, DELAY, grid=LINE_GRID)

    assert moved.skew == pytest.approx(base.skew, rel=1e-9)
    assert moved.intercept == pytest.approx(base.intercept + shift, rel=1e-6, abs=1e-13)


def test_scale_covariance(clean_line):
    t_send, t_recv = clean_line
    base = single_direction_estimate(t_send, t_recv, DELAY, grid=LINE_GRID)
    scaled = single_direction_estimate(t_send, 1.002 * t_recv, DELAY, grid=LINE_GRID.scaled(1.002))

    assert scaled.skew == pytest.approx(1.002 * base.skew, abs=LINE_GRID.phi_step)
    assert scaled.intercept == pytest.approx(1.002 * base.intercept, abs=2 * LINE_GRID.linear_step)


def test_too_few_exchanges():
    with pytest.raises(ValueError):
        single_direction_estimate([0.0], [1e-6], DELAY)
    with pytest.raises(ValueError):
        single_direction_estimate([0.0, 1.0], [1e-6], DELAY)


def test_grid_misses_skew(clean_line):
    t_send, t_recv = clean_line
    grid = IntegrationGrid(phi_range=(1.5, 2.0), phi_step=1e-3, linear_step=1e-8)

    with pytest.raises(GridTooSmallError):
        single_direction_estimate(t_send, t_recv, DELAY, grid=grid)


def test_asymmetry_probability():
    assert asymmetry_probability(2e-6, 2e-6, 1e6) == 0.5
    assert asymmetry_probability(-2e-6, 2e-6, 1e6) == 0.5
    assert 0.5 < asymmetry_probability(4e-6, 2e-6, 1e6) < 1
    assert 0 < asymmetry_probability(0.0, 2e-6, 1e6) < 0.5


def test_asymmetry_probability_stays_inside_unit_interval():
    assert 0.5 < asymmetry_probability(50e-6, 2e-6, 1e6) < 1
    assert 0 < asymmetry_probability(0.0, 2e-6, 1e9) < 0.5
    assert asymmetry_probability(-50e-6, 2e-6, 1e6) == 1 - PI_MARGIN


def test_initialize_default_scenario(make_scenario, make_window):
    data = make_window(make_scenario(exchanges=100), seed=1)
    state = initialize(data)

    assert state.num_paths == 3
    assert ((state.pi > 0) & (state.pi < 1)).all()
    assert ((state.asymmetries != 0) == (state.pi > 0.5)).all()
    assert state.clock.skew == pytest.approx(1.01, abs=5e-3)
    assert all(mixture.num_components == 4 for mixture in state.forward + state.reverse)


def test_per_path_line(make_scenario, make_window):
    data = make_window(make_scenario(num_paths=1, asymmetries=(0.0,), exchanges=60), seed=2)
    fwd = GmmParams.single(float(data.residuals.fwd.mean()), float(data.residuals.fwd.std()))
    rev = GmmParams.single(float(data.residuals.rev.mean()), float(data.residuals.rev.std()))
    line = per_path_line(data, 0, fwd, rev)

    assert line.skew_fwd == pytest.approx(1.01, abs=5e-3)
    assert line.skew_rev == pytest.approx(1.01, abs=5e-3)
    assert (line.gamma + line.zeta) / 2 == pytest.approx(1e-6, abs=5e-6)


def test_initialize_needs_previous_window(make_scenario, make_window):
    data = make_window(make_scenario(exchanges=20, prev_exchanges=3))

    with pytest.raises(ValueError):
        initialize(data, InitConfig(components=4))


def test_invalid_config():
    with pytest.raises(ValueError):
        InitConfig(components=0)
    with pytest.raises(ValueError):
        InitConfig(kappa=0.0)
