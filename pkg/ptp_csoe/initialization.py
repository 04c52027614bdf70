import logging
import math
import numpy as np
from dataclasses import dataclass
from typing import NamedTuple
from numpy.typing import ArrayLike
from scipy.special import expit
from ptp_csoe.exceptions import GridTooSmallError
from ptp_csoe.genie import DelayPdf, IntegrationGrid, _expand, _log_total, _pooled_slope, _skew_interval
from ptp_csoe.gmm import fit_em
from ptp_csoe.sage import SageState
from ptp_csoe.types import FloatArray, ClockParams, Direction, WindowData

logger = logging.getLogger(__name__)

PI_MARGIN = 1e-12


@dataclass(frozen=True, kw_only=True)
class InitConfig:
    """
    :param components: Mixture components fitted to each path and direction
    :param d_tau: Asymmetry detection threshold in seconds
    :param kappa: Slope of the asymmetry-probability sigmoid, per second
    :param grid: Lattice of the single-direction estimator
    """
    components: int = 4
    d_tau: float = 2e-6
    kappa: float = 1e6
    grid: IntegrationGrid = IntegrationGrid(phi_step=1e-4, linear_step=5e-8)

    def __post_init__(self):
        if self.components < 1:
            raise ValueError(f'Need at least one mixture component, got {self.components}')
        if self.d_tau < 0 or self.kappa <= 0:
            raise ValueError(f'Invalid detection setup: d_tau={self.d_tau}, kappa={self.kappa}')


class LineEstimate(NamedTuple):
    skew: float
    intercept: float


class PerPathLine(NamedTuple):
    gamma: float
    zeta: float
    skew_fwd: float
    skew_rev: float


def single_direction_estimate(
        t_send: ArrayLike,
        t_recv: ArrayLike,
        delay_pdf: DelayPdf,
        direction: Direction = 'forward',
        grid: IntegrationGrid = InitConfig.grid
) -> LineEstimate:
    """
    Posterior means of skew and intercept of t_recv = (t_send + w) * skew + intercept in the forward direction, or
    t_recv = (t_send - w) * skew + intercept in the reverse one, where w follows delay_pdf.

    :param t_send: Send times on the sender clock
    :param t_recv: Receive times on the receiver clock
    :param delay_pdf: Density of the queuing delay w
    :param direction: 'forward' (master to slave) or 'reverse' (slave to master)
    :param grid: Riemann-sum lattice; the intercept lives on its linear axis
    :return: Instance of LineEstimate
    """
    t_send = np.asarray(t_send, dtype=float).ravel()
    t_recv = np.asarray(t_recv, dtype=float).ravel()
    if t_send.size != t_recv.size:
        raise ValueError(f'Got {t_send.size} send and {t_recv.size} receive times')
    if t_send.size < 2:
        raise ValueError(f'Need at least two exchanges, got {t_send.size}')

    sign = 1.0 if direction == 'forward' else -1.0
    low, high = delay_pdf.support()
    exponent = t_send.size + 3
    phi_lattice, linear = grid.phi_lattice, grid.linear_lattice

    first, last = phi_lattice.index_range(*_skew_interval([(t_recv, t_send, high - low)]))
    if first > last:
        raise GridTooSmallError(
            f'No skew in {grid.phi_range} is consistent with the {direction} timestamps, widen the grid limits'
        )

    means = {}

    def evaluate_skew(index: np.ndarray) -> FloatArray:
        weights = np.full(index.size, -math.inf)
        for position, k in enumerate(index):
            skew = float(phi_lattice.values(k))
            x = t_recv / skew - t_send
            if sign > 0:
                shift_low, shift_high = x.max() - high, x.min() - low
            else:
                shift_low, shift_high = x.max() + low, x.min() + high

            start, stop = linear.index_range(skew * shift_low, skew * shift_high)
            if start > stop:
                continue

            def evaluate(inner: np.ndarray) -> FloatArray:
                shift = linear.values(inner)[:, None] / skew
                return delay_pdf.logpdf(sign * (x - shift)).sum(axis=1)

            seed = linear.nearest(skew * (x.mean() - sign * delay_pdf.mean))
            offset, values = _expand(evaluate, seed, start, stop, grid.prune_nats, grid.chunk)
            mass = _log_total(values)
            if mass == -math.inf:
                continue

            row = np.exp(values - values.max())
            means[int(k)] = float(row @ linear.values(offset + np.arange(values.size)) / row.sum())
            weights[position] = mass - exponent * math.log(skew)
        return weights

    seed = phi_lattice.nearest(_pooled_slope([t_send], [t_recv]))
    start, log_weights = _expand(evaluate_skew, seed, first, last, grid.prune_nats, 1)
    if not np.isfinite(log_weights.max()):
        raise GridTooSmallError(f'The grid misses all {direction} posterior mass, widen the grid limits')

    index = start + np.arange(log_weights.size)
    weights = np.exp(log_weights - log_weights.max())
    intercepts = np.array([means.get(int(k), 0.0) for k in index])
    total = weights.sum()
    return LineEstimate(float(weights @ phi_lattice.values(index) / total), float(weights @ intercepts / total))


def per_path_line(
        data: WindowData,
        path: int,
        fwd_pdf: DelayPdf,
        rev_pdf: DelayPdf,
        grid: IntegrationGrid = InitConfig.grid
) -> PerPathLine:
    records = data.records
    forward = single_direction_estimate(records.t1[path], records.t2[path], fwd_pdf, 'forward', grid)
    reverse = single_direction_estimate(records.t4[path], records.t3[path], rev_pdf, 'reverse', grid)
    return PerPathLine(forward.intercept, reverse.intercept, forward.skew, reverse.skew)


def asymmetry_probability(delay_gap: float, d_tau: float, kappa: float) -> float:
    """
    Logistic score of the delay gap against the threshold, kept PI_MARGIN away from 0 and 1
    """
    return float(np.clip(expit((abs(delay_gap) - d_tau) * kappa), PI_MARGIN, 1 - PI_MARGIN))


def initialize(data: WindowData, config: InitConfig = InitConfig()) -> SageState:
    """
    Starting point for SAGE: mixtures fitted to the previous-window residuals, per-path line fits in both
    directions, then a common clock and per-path delays, asymmetries and asymmetry probabilities.

    :param data: Current window records and previous-window residuals
    :param config: Instance of InitConfig
    :return: Instance of SageState
    """
    if data.num_prev < config.components:
        raise ValueError(
            f'Previous window has {data.num_prev} exchanges, fitting {config.components} components needs as many'
        )

    forward = tuple(fit_em(data.residuals.fwd[i], config.components).params for i in range(data.num_paths))
    reverse = tuple(fit_em(data.residuals.rev[i], config.components).params for i in range(data.num_paths))

    lines = [per_path_line(data, i, forward[i], reverse[i], config.grid) for i in range(data.num_paths)]
    for i, line in enumerate(lines):
        logger.debug(f'Path {i} line fit: {line}')

    gammas = np.array([line.gamma for line in lines])
    zetas = np.array([line.zeta for line in lines])
    skews = np.array([(line.skew_fwd + line.skew_rev) / 2 for line in lines])

    offset = float(np.median((gammas + zetas) / 2))
    skew = float(skews.mean())
    fwd_delays = (gammas - offset) / skew
    rev_delays = (offset - zetas) / skew
    gaps = fwd_delays - rev_delays

    asymmetric = np.abs(gaps) > config.d_tau
    pi = np.array([asymmetry_probability(gap, config.d_tau, config.kappa) for gap in gaps])
    det_delays = np.where(asymmetric, rev_delays, (fwd_delays + rev_delays) / 2)
    asymmetries = np.where(asymmetric, gaps, 0.0)

    logger.info(f'Initial clock estimate skew={skew}, offset={offset}, paths flagged {asymmetric.tolist()}')
    return SageState(
        clock=ClockParams(skew=skew, offset=offset),
        det_delays=det_delays,
        asymmetries=asymmetries,
        pi=pi,
        forward=forward,
        reverse=reverse
    )
