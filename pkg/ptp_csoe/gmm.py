import logging
import math
import numpy as np
from dataclasses import dataclass
from typing import Callable, NamedTuple
from numpy.typing import ArrayLike
from scipy.special import logsumexp
from scipy.stats import norm
from ptp_csoe.exceptions import LikelihoodDecreaseError
from ptp_csoe.types import FloatArray

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-9
GMM_TAIL_SIGMAS = 12.0
STARVED_MASS = 1e-300
EM_DECREASE_SLACK = 1e-9


@dataclass(frozen=True, kw_only=True)
class GmmParams:
    weights: FloatArray
    means: FloatArray
    stds: FloatArray

    def __post_init__(self):
        arrays = []
        for name in ('weights', 'means', 'stds'):
            array = np.array(getattr(self, name), dtype=float).ravel()
            array.setflags(write=False)
            object.__setattr__(self, name, array)
            arrays.append(array)

        weights, means, stds = arrays
        if not (weights.size == means.size == stds.size) or weights.size == 0:
            raise ValueError(f'Got {weights.size} weights, {means.size} means and {stds.size} stds')
        if ((weights < 0) | (weights > 1)).any() or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise ValueError(f'Mixture weights {weights} are not a probability vector')
        if not (np.isfinite(means).all() and np.isfinite(stds).all()):
            raise ValueError('Mixture means and stds must be finite')
        if (stds < STD_FLOOR * (1 - 1e-12)).any():
            raise ValueError(f'Mixture stds {stds} fall below the floor {STD_FLOOR}')

    @classmethod
    def single(cls, mean: float, std: float) -> 'GmmParams':
        return cls(weights=[1.0], means=[mean], stds=[std])

    @property
    def num_components(self) -> int:
        return self.weights.size

    @property
    def variances(self) -> FloatArray:
        return self.stds ** 2

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    def component_logpdf(self, x: ArrayLike) -> FloatArray:
        """
        Log of weight times component density, with components on the last axis
        """
        x = np.asarray(x, dtype=float)[..., None]
        with np.errstate(divide='ignore'):
            log_weights = np.log(self.weights)
        return log_weights + norm.logpdf(x, self.means, self.stds)

    def logpdf(self, x: ArrayLike) -> FloatArray:
        return logsumexp(self.component_logpdf(x), axis=-1)

    def pdf(self, x: ArrayLike) -> FloatArray:
        return np.exp(self.logpdf(x))

    def support(self, tail_sigmas: float = GMM_TAIL_SIGMAS) -> tuple[float, float]:
        """
        Effective support: beyond it every component is more than tail_sigmas standard deviations away
        """
        return (float(np.min(self.means - tail_sigmas * self.stds)),
                float(np.max(self.means + tail_sigmas * self.stds)))


def mixture_pdf(params: GmmParams, x: ArrayLike) -> FloatArray:
    return params.pdf(x)


def log_mixture_pdf(params: GmmParams, x: ArrayLike) -> FloatArray:
    return params.logpdf(x)


class GmmFit(NamedTuple):
    params: GmmParams
    log_likelihood: float
    converged: bool
    iterations: int


def quantile_seed(samples: FloatArray, num_components: int, std_floor: float = STD_FLOOR) -> GmmParams:
    """
    Means at the centers of num_components equal-probability slices of the sorted samples, equal weights and
    the sample standard deviation for every component
    """
    levels = (np.arange(num_components) + 0.5) / num_components
    std = max(float(np.std(samples)), std_floor)
    return GmmParams(
        weights=np.full(num_components, 1 / num_components),
        means=np.quantile(samples, levels),
        stds=np.full(num_components, std)
    )


def _likelihood_decreased(previous: float, current: float, slack: float) -> bool:
    return current < previous - slack


def fit_em(
        samples: ArrayLike,
        num_components: int = 4,
        init: GmmParams | Callable[[FloatArray, int], GmmParams] = quantile_seed,
        tol: float = 1e-8,
        max_iter: int = 500,
        std_floor: float = STD_FLOOR
) -> GmmFit:
    """
    Fits a Gaussian mixture with classic EM.

    :param samples: One-dimensional samples
    :param num_components: Number of mixture components (default: 4)
    :param init: Starting mixture or a seeding rule called with samples and num_components
    :param tol: Relative change of the log-likelihood treated as convergence
    :param max_iter: Maximum number of EM iterations
    :param std_floor: Lower bound on every component standard deviation
    :return: Fitted mixture, its log-likelihood, convergence flag and iteration count
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < num_components:
        raise ValueError(f'Need at least {num_components} samples, got {samples.size}')

    params = init if isinstance(init, GmmParams) else init(samples, num_components)
    if params.num_components != num_components:
        raise ValueError(f'Initial mixture has {params.num_components} components, expected {num_components}')

    variance_floor = std_floor ** 2
    log_likelihood = float(params.logpdf(samples).sum())

    for iteration in range(1, max_iter + 1):
        component = params.component_logpdf(samples)
        resp = np.exp(component - logsumexp(component, axis=1, keepdims=True))
        mass = resp.sum(axis=0)
        starved = mass < STARVED_MASS
        safe_mass = np.where(starved, 1.0, mass)

        means = np.where(starved, params.means, resp.T @ samples / safe_mass)
        spread = (resp * (samples[:, None] - means) ** 2).sum(axis=0) / safe_mass
        variances = np.where(starved, params.variances, np.maximum(spread, variance_floor))

        if starved.any():
            logger.warning(f'EM components {np.flatnonzero(starved).tolist()} lost all responsibility, kept as is')

        weights = mass / samples.size
        params = GmmParams(weights=weights / weights.sum(), means=means, stds=np.sqrt(variances))
        previous, log_likelihood = log_likelihood, float(params.logpdf(samples).sum())

        if _likelihood_decreased(previous, log_likelihood, EM_DECREASE_SLACK):
            raise LikelihoodDecreaseError(
                f'EM log-likelihood decreased from {previous} to {log_likelihood} at iteration {iteration}'
            )

        if abs(log_likelihood - previous) <= tol * abs(previous):
            return GmmFit(params, log_likelihood, True, iteration)

    logger.info(f'EM did not converge in {max_iter} iterations, log-likelihood {log_likelihood}')
    return GmmFit(params, log_likelihood, False, max_iter)
