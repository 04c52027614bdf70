import numpy as np
from dataclasses import dataclass
from typing import Protocol
from numpy.typing import ArrayLike
from ptp_csoe.exceptions import ModelViolationError
from ptp_csoe.types import (FloatArray, Direction, Scenario, ExchangeRecords, PrevEstimates, PrevWindowResiduals,
                            ClockParams)


class DelaySource(Protocol):
    def __call__(self, path: int, direction: Direction, size: int, rng: np.random.Generator) -> FloatArray: ...


class SendSchedule(Protocol):
    def __call__(self, num_paths: int, num_exchanges: int) -> tuple[FloatArray, FloatArray]: ...


@dataclass(frozen=True, kw_only=True)
class PeriodicSchedule:
    """
    Master sends exchange j at start + j * spacing and receives the slave reply at that time plus turnaround
    """
    spacing: float = 60e-6
    turnaround: float = 30e-6
    start: float = 0.0

    def __post_init__(self):
        if self.spacing <= 0 or self.turnaround <= 0:
            raise ValueError(f'Spacing and turnaround must be positive, got {self.spacing}, {self.turnaround}')

    def __call__(self, num_paths: int, num_exchanges: int) -> tuple[FloatArray, FloatArray]:
        t1 = self.start + self.spacing * np.arange(num_exchanges, dtype=float)
        t1 = np.broadcast_to(t1, (num_paths, num_exchanges)).copy()
        return t1, t1 + self.turnaround


def timestamps_from_delays(
        scenario: Scenario,
        w1: ArrayLike,
        w2: ArrayLike,
        t1: ArrayLike,
        t4: ArrayLike
) -> ExchangeRecords:
    """
    Applies the two-way exchange model to given queuing delays and master timestamps. All arrays have shape
    (paths, exchanges)
    """
    skew, offset = scenario.clock.skew, scenario.clock.offset
    t1, t4 = np.asarray(t1, dtype=float), np.asarray(t4, dtype=float)
    fwd = scenario.forward_delays[:, None]
    rev = scenario.reverse_delays[:, None]

    t2 = (t1 + fwd + np.asarray(w1, dtype=float)) * skew + offset
    t3 = (t4 - rev - np.asarray(w2, dtype=float)) * skew + offset
    return ExchangeRecords(t1=t1, t2=t2, t3=t3, t4=t4)


def sample_queuing_delays(
        scenario: Scenario,
        delay_source: DelaySource,
        rng: np.random.Generator,
        num_exchanges: int | None = None
) -> tuple[FloatArray, FloatArray]:
    """
    :return: Forward and reverse queuing delays, each of shape (paths, exchanges)
    """
    size = scenario.exchanges_per_path if num_exchanges is None else num_exchanges
    w1 = np.stack([np.asarray(delay_source(i, 'forward', size, rng), dtype=float) for i in range(scenario.num_paths)])
    w2 = np.stack([np.asarray(delay_source(i, 'reverse', size, rng), dtype=float) for i in range(scenario.num_paths)])

    for name, delays in (('forward', w1), ('reverse', w2)):
        if delays.shape != (scenario.num_paths, size):
            raise ValueError(f'Delay source returned {name} delays of shape {delays.shape}')
        if not np.isfinite(delays).all() or (delays <= 0).any():
            path, exchange = np.argwhere(~(np.isfinite(delays) & (delays > 0)))[0]
            raise ModelViolationError(
                f'Sampled {name} queuing delay {delays[path, exchange]} on path {path}, exchange {exchange} '
                f'is not strictly positive'
            )

    return w1, w2


def generate_timestamps(
        scenario: Scenario,
        delay_source: DelaySource,
        schedule: SendSchedule = PeriodicSchedule(),
        rng: np.random.Generator | None = None,
        num_exchanges: int | None = None
) -> ExchangeRecords:
    """
    Generates the timestamps of one window of two-way exchanges on every path.

    :param scenario: Ground truth of the window
    :param delay_source: Per-path random queuing-delay sampler
    :param schedule: Rule giving master send and receive times
    :param rng: Random stream owned by the caller (default: fresh unseeded stream)
    :param num_exchanges: Window length, scenario.exchanges_per_path by default
    :return: Instance of ExchangeRecords
    """
    rng = np.random.default_rng() if rng is None else rng
    size = scenario.exchanges_per_path if num_exchanges is None else num_exchanges

    w1, w2 = sample_queuing_delays(scenario, delay_source, rng, size)
    t1, t4 = schedule(scenario.num_paths, size)
    return timestamps_from_delays(scenario, w1, w2, t1, t4)


def prev_window_residuals(prev_records: ExchangeRecords, prev_estimates: PrevEstimates) -> PrevWindowResiduals:
    """
    Queuing delays of the previous window recovered with that window's parameter estimates
    """
    if prev_estimates.fwd_delays.size != prev_records.num_paths:
        raise ValueError(
            f'Got delay estimates for {prev_estimates.fwd_delays.size} paths, records for {prev_records.num_paths}'
        )

    skew, offset = prev_estimates.clock.skew, prev_estimates.clock.offset
    fwd = (prev_records.t2 - offset) / skew - prev_records.t1 - prev_estimates.fwd_delays[:, None]
    rev = (offset - prev_records.t3) / skew + prev_records.t4 - prev_estimates.rev_delays[:, None]
    return PrevWindowResiduals(fwd=fwd, rev=rev)


def exact_prev_estimates(scenario: Scenario) -> PrevEstimates:
    return PrevEstimates(
        clock=scenario.clock,
        fwd_delays=scenario.forward_delays,
        rev_delays=scenario.reverse_delays
    )


def noisy_prev_estimates(
        scenario: Scenario,
        linear_std: float,
        skew_std: float,
        rng: np.random.Generator
) -> PrevEstimates:
    """
    Previous-window estimates drawn as Gaussians around the true values. Offset and both path delays share
    linear_std (seconds), the skew uses skew_std
    """
    num_paths = scenario.num_paths
    clock = ClockParams(
        skew=scenario.clock.skew + rng.normal(0.0, skew_std),
        offset=scenario.clock.offset + rng.normal(0.0, linear_std)
    )
    return PrevEstimates(
        clock=clock,
        fwd_delays=scenario.forward_delays + rng.normal(0.0, linear_std, num_paths),
        rev_delays=scenario.reverse_delays + rng.normal(0.0, linear_std, num_paths)
    )
