import math
import numpy as np
from typing import Iterable, NamedTuple
from scipy.stats import bootstrap, norm
from ptp_csoe.types import FloatArray, TrialResult, Quantity, Estimator


class Interval(NamedTuple):
    low: float
    high: float
    std_error: float


class DetectionRates(NamedTuple):
    p_miss: float
    p_false_alarm: float


def normalized_errors(results: Iterable[TrialResult], which: Quantity, estimator: Estimator = 'sage') -> FloatArray:
    """
    Estimation errors divided by the true skew, for every trial that produced the estimate
    """
    errors = []
    for result in results:
        estimate = getattr(result, estimator)
        if result.failed or estimate is None:
            continue
        error = estimate.offset - result.truth.offset if which == 'offset' else estimate.skew - result.truth.skew
        errors.append(error / result.truth.skew)
    return np.array(errors, dtype=float)


def _root_mean_square(errors: FloatArray, axis: int = -1) -> FloatArray:
    return np.sqrt(np.mean(np.square(errors), axis=axis))


def nrmse(results: Iterable[TrialResult], which: Quantity, estimator: Estimator = 'sage') -> float:
    """
    Root of the mean skew-normalized squared error, nan without usable trials
    """
    errors = normalized_errors(results, which, estimator)
    return float(_root_mean_square(errors)) if errors.size else math.nan


def bootstrap_ci(
        errors: FloatArray,
        resamples: int = 1000,
        level: float = 0.95,
        rng: np.random.Generator | None = None
) -> Interval:
    """
    Percentile bootstrap interval of the root mean square of errors
    """
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        return Interval(math.nan, math.nan, math.nan)
    if errors.size == 1 or np.all(errors == errors[0]):
        value = float(_root_mean_square(errors))
        return Interval(value, value, 0.0)

    result = bootstrap(
        (errors,),
        _root_mean_square,
        n_resamples=resamples,
        confidence_level=level,
        method='percentile',
        random_state=np.random.default_rng() if rng is None else rng
    )
    interval = result.confidence_interval
    return Interval(float(interval.low), float(interval.high), float(result.standard_error))


def normal_ci(values: FloatArray, level: float = 0.95) -> Interval:
    """
    Normal-approximation interval of the mean
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Interval(math.nan, math.nan, math.nan)

    std_error = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    z = norm.ppf(1 - (1 - level) / 2)
    mean = float(values.mean())
    return Interval(mean - z * std_error, mean + z * std_error, std_error)


def detection_rates(results: Iterable[TrialResult]) -> DetectionRates:
    """
    Fraction of asymmetric paths classified symmetric and of symmetric paths classified asymmetric, pooled over
    trials. A rate without any path to count is nan
    """
    misses = asymmetric = false_alarms = symmetric = 0

    for result in results:
        if result.failed or result.eta_hat is None:
            continue
        for truth, flagged in zip(result.eta, result.eta_hat):
            if truth:
                asymmetric += 1
                misses += not flagged
            else:
                symmetric += 1
                false_alarms += flagged

    return DetectionRates(
        misses / asymmetric if asymmetric else math.nan,
        false_alarms / symmetric if symmetric else math.nan
    )
