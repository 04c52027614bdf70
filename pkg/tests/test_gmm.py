import math
import numpy as np
import pytest
from ptp_csoe.gmm import (GmmParams, STD_FLOOR, EM_DECREASE_SLACK, fit_em, quantile_seed, mixture_pdf, log_mixture_pdf,
                          _likelihood_decreased)
from tests.utils import sample_gmm


def test_standard_normal_peak():
    params = GmmParams.single(0.0, 1.0)

    assert mixture_pdf(params, 0.0) == pytest.approx(0.398942, rel=1e-6)
    assert log_mixture_pdf(params, 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert params.support() == (-12.0, 12.0)


def test_mixture_density(narrow_pdf):
    x = np.linspace(10e-6, 40e-6, 7)
    expected = (0.6 * np.exp(-0.5 * ((x - 20e-6) / 2e-6) ** 2) / (2e-6 * math.sqrt(2 * math.pi))
                + 0.4 * np.exp(-0.5 * ((x - 26e-6) / 3e-6) ** 2) / (3e-6 * math.sqrt(2 * math.pi)))

    assert narrow_pdf.pdf(x) == pytest.approx(expected, rel=1e-12)
    assert narrow_pdf.mean == pytest.approx(22.4e-6)
    assert narrow_pdf.num_components == 2


def test_invalid_params():
    with pytest.raises(ValueError):
        GmmParams(weights=[0.5, 0.6], means=[0.0, 1.0], stds=[1.0, 1.0])
    with pytest.raises(ValueError):
        GmmParams(weights=[1.0], means=[0.0, 1.0], stds=[1.0])
    with pytest.raises(ValueError):
        GmmParams.single(0.0, STD_FLOOR / 10)


def test_recovery():
    truth = GmmParams(weights=[0.3, 0.7], means=[-5.0, 5.0], stds=[1.0, 1.5])
    samples = sample_gmm(truth, 10_000, np.random.default_rng(7))
    fit = fit_em(samples, 2)
    order = np.argsort(fit.params.means)

    standard_errors = truth.stds / np.sqrt(truth.weights * samples.size)
    assert fit.converged
    assert np.abs(fit.params.means[order] - truth.means).max() < 3 * standard_errors.max()
    assert fit.params.weights[order] == pytest.approx(truth.weights, abs=0.02)
    assert fit.params.stds[order] == pytest.approx(truth.stds, rel=0.05)


def test_likelihood_monotone():
    rng = np.random.default_rng(8)
    truth = GmmParams(weights=[0.5, 0.3, 0.2], means=[20e-6, 24e-6, 35e-6], stds=[1e-6, 2e-6, 4e-6])

    for _ in range(20):
        samples = sample_gmm(truth, 300, rng)
        start = quantile_seed(samples, 4)
        fit = fit_em(samples, 4, init=start, max_iter=100)
        assert fit.log_likelihood >= start.logpdf(samples).sum()


def test_single_component_closed_form():
    samples = np.random.default_rng(9).normal(3.0, 0.5, 500)
    fit = fit_em(samples, 1)

    assert fit.params.means[0] == pytest.approx(samples.mean(), rel=1e-12)
    assert fit.params.stds[0] == pytest.approx(samples.std(), rel=1e-9)


def test_constant_samples():
    fit = fit_em(np.full(10, 5e-6), 2)

    assert fit.params.stds == pytest.approx([STD_FLOOR, STD_FLOOR])
    assert fit.params.means == pytest.approx([5e-6, 5e-6])


def test_quantile_seed():
    samples = np.arange(1.0, 101.0)
    seed = quantile_seed(samples, 4)

    assert seed.weights == pytest.approx([0.25] * 4)
    assert seed.means == pytest.approx(np.quantile(samples, [0.125, 0.375, 0.625, 0.875]))
    assert seed.stds == pytest.approx([samples.std()] * 4)


def test_too_few_samples():
    with pytest.raises(ValueError):
        fit_em([1.0, 2.0], 4)


def test_decrease_slack_is_absolute():
    assert _likelihood_decreased(-5000.0, -5000.0 - 2e-9, EM_DECREASE_SLACK)
    assert not _likelihood_decreased(-5000.0, -5000.0 - 5e-10, EM_DECREASE_SLACK)
    assert not _likelihood_decreased(-5000.0, -4999.0, EM_DECREASE_SLACK)
