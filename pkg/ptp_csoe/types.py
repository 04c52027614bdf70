import math
import numpy as np
from dataclasses import dataclass
from numpy.typing import NDArray, ArrayLike
from typing import Literal, TypedDict, NotRequired, Any
from ptp_csoe.exceptions import ModelViolationError

FloatArray = NDArray[np.float64]
Direction = Literal['forward', 'reverse']
Estimator = Literal['sage', 'genie']
Quantity = Literal['offset', 'skew']
Metric = Literal['nrmse_offset', 'nrmse_skew', 'p_miss', 'p_false_alarm', 'mean_iterations', 'failure_rate']
SkewRootConvention = Literal['derived', 'printed']
TrafficModel = Literal['tm1']
SweepAxis = Literal['P', 'load', 'clock_cases', 'components', 'prev_load', 'prev_noise']
ExperimentName = Literal['convergence', 'load_sweep', 'clock_cases', 'detection', 'mixture_order',
                         'prev_window_mismatch', 'prev_estimate_noise']


def _readonly(value: ArrayLike, ndim: int, name: str) -> FloatArray:
    array = np.array(value, dtype=float)
    if array.ndim != ndim:
        raise ValueError(f'{name} must have {ndim} dimension(s), got shape {array.shape}')
    array.setflags(write=False)
    return array


@dataclass(frozen=True, kw_only=True)
class ClockParams:
    skew: float
    offset: float

    def __post_init__(self):
        if not (math.isfinite(self.skew) and math.isfinite(self.offset)):
            raise ValueError(f'Clock parameters must be finite, got skew={self.skew}, offset={self.offset}')
        if self.skew <= 0:
            raise ModelViolationError(f'Clock skew must be positive, got {self.skew}')


@dataclass(frozen=True, kw_only=True)
class PathConfig:
    det_delay: float
    asymmetry: float = 0.0
    is_asymmetric: bool = False

    def __post_init__(self):
        if self.det_delay < 0:
            raise ValueError(f'Deterministic delay must be non-negative, got {self.det_delay}')
        if not self.is_asymmetric and self.asymmetry != 0:
            raise ValueError(f'Symmetric path can not carry asymmetry {self.asymmetry}')

    @property
    def forward_delay(self) -> float:
        return self.det_delay + self.asymmetry if self.is_asymmetric else self.det_delay

    @property
    def reverse_delay(self) -> float:
        return self.det_delay


@dataclass(frozen=True, kw_only=True)
class Scenario:
    paths: tuple[PathConfig, ...]
    clock: ClockParams
    exchanges_per_path: int
    prev_window_exchanges: int = 0
    d_tau: float = 2e-6

    def __post_init__(self):
        object.__setattr__(self, 'paths', tuple(self.paths))

        if not self.paths:
            raise ValueError('Scenario needs at least one path')
        if self.exchanges_per_path < 1:
            raise ValueError(f'Exchanges per path must be at least 1, got {self.exchanges_per_path}')
        if self.prev_window_exchanges < 0:
            raise ValueError(f'Previous window length must be non-negative, got {self.prev_window_exchanges}')

        if 2 * self.num_asymmetric >= self.num_paths:
            raise ModelViolationError(
                f'{self.num_asymmetric} of {self.num_paths} paths are asymmetric, fewer than half are allowed'
            )

        for index, path in enumerate(self.paths):
            if path.is_asymmetric and abs(path.asymmetry) < self.d_tau:
                raise ModelViolationError(
                    f'Path {index} asymmetry {path.asymmetry} is below the detection threshold {self.d_tau}'
                )

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    @property
    def eta(self) -> tuple[bool, ...]:
        return tuple(path.is_asymmetric for path in self.paths)

    @property
    def num_asymmetric(self) -> int:
        return sum(self.eta)

    @property
    def forward_delays(self) -> FloatArray:
        return np.array([path.forward_delay for path in self.paths])

    @property
    def reverse_delays(self) -> FloatArray:
        return np.array([path.reverse_delay for path in self.paths])


@dataclass(frozen=True, kw_only=True)
class ExchangeRecord:
    t1: float
    t2: float
    t3: float
    t4: float


@dataclass(frozen=True, kw_only=True)
class ExchangeRecords:
    """
    Timestamps of a window of two-way exchanges. Every array has shape (paths, exchanges)
    """
    t1: FloatArray
    t2: FloatArray
    t3: FloatArray
    t4: FloatArray

    def __post_init__(self):
        shape = None
        for name in ('t1', 't2', 't3', 't4'):
            array = _readonly(getattr(self, name), 2, name)
            if shape is not None and array.shape != shape:
                raise ValueError(f'{name} has shape {array.shape}, expected {shape}')
            if not np.isfinite(array).all():
                raise ValueError(f'{name} contains non-finite timestamps')
            shape = array.shape
            object.__setattr__(self, name, array)

    @property
    def num_paths(self) -> int:
        return self.t1.shape[0]

    @property
    def num_exchanges(self) -> int:
        return self.t1.shape[1]

    def record(self, path: int, exchange: int) -> ExchangeRecord:
        return ExchangeRecord(
            t1=float(self.t1[path, exchange]),
            t2=float(self.t2[path, exchange]),
            t3=float(self.t3[path, exchange]),
            t4=float(self.t4[path, exchange])
        )

    def path(self, index: int) -> tuple[ExchangeRecord, ...]:
        return tuple(self.record(index, j) for j in range(self.num_exchanges))


@dataclass(frozen=True, kw_only=True)
class PrevWindowResiduals:
    fwd: FloatArray
    rev: FloatArray

    def __post_init__(self):
        fwd = _readonly(self.fwd, 2, 'fwd')
        rev = _readonly(self.rev, 2, 'rev')
        if fwd.shape != rev.shape:
            raise ValueError(f'Forward residuals have shape {fwd.shape}, reverse {rev.shape}')
        object.__setattr__(self, 'fwd', fwd)
        object.__setattr__(self, 'rev', rev)

    @property
    def num_exchanges(self) -> int:
        return self.fwd.shape[1]

    @classmethod
    def empty(cls, num_paths: int) -> 'PrevWindowResiduals':
        return cls(fwd=np.empty((num_paths, 0)), rev=np.empty((num_paths, 0)))


@dataclass(frozen=True, kw_only=True)
class PrevEstimates:
    """
    Clock and per-path forward (master to slave) and reverse (slave to master) delay estimates of the previous window
    """
    clock: ClockParams
    fwd_delays: FloatArray
    rev_delays: FloatArray

    def __post_init__(self):
        fwd = _readonly(self.fwd_delays, 1, 'fwd_delays')
        rev = _readonly(self.rev_delays, 1, 'rev_delays')
        if fwd.shape != rev.shape:
            raise ValueError(f'Got {fwd.size} forward and {rev.size} reverse delay estimates')
        if not (np.isfinite(fwd).all() and np.isfinite(rev).all()):
            raise ValueError('Previous delay estimates must be finite')
        object.__setattr__(self, 'fwd_delays', fwd)
        object.__setattr__(self, 'rev_delays', rev)


@dataclass(frozen=True, kw_only=True)
class WindowData:
    records: ExchangeRecords
    residuals: PrevWindowResiduals

    def __post_init__(self):
        if self.residuals.fwd.shape[0] != self.records.num_paths:
            raise ValueError(
                f'Residuals cover {self.residuals.fwd.shape[0]} paths, records {self.records.num_paths}'
            )

    @property
    def num_paths(self) -> int:
        return self.records.num_paths

    @property
    def num_exchanges(self) -> int:
        return self.records.num_exchanges

    @property
    def num_prev(self) -> int:
        return self.residuals.num_exchanges


@dataclass(frozen=True, kw_only=True)
class TrialResult:
    trial_id: int
    truth: ClockParams | None = None
    eta: tuple[bool, ...] = ()
    sage: ClockParams | None = None
    genie: ClockParams | None = None
    eta_hat: tuple[bool, ...] | None = None
    iterations: int | None = None
    converged: bool | None = None
    wall_time: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class TrafficInfo(TypedDict):
    model: TrafficModel
    load: float | list[float]
    num_switches: NotRequired[int]
    link_rate_bps: NotRequired[float]
    sync_packet_bytes: NotRequired[int]
    size_mix: NotRequired[list[list[float]]]
    pdf_samples: NotRequired[int]
    pdf_bin_width_us: NotRequired[float]
    pdf_path: NotRequired[str]


class ScheduleInfo(TypedDict):
    spacing_us: float
    turnaround_us: float


class GridInfo(TypedDict):
    phi_range: list[float]
    phi_step: float
    linear_range_us: list[float]
    linear_step_us: float
    prune_nats: NotRequired[float]


class PrevNoiseInfo(TypedDict):
    linear_std_us: float
    skew_std: float


class ScenarioInfo(TypedDict):
    N: int
    P: int
    phi: float
    delta_us: float
    d_us: float | list[float]
    tau_us: list[float]
    d_tau_us: float
    traffic: TrafficInfo
    P_t: NotRequired[int]
    seed: NotRequired[int]
    schedule: NotRequired[ScheduleInfo]
    components: NotRequired[int]
    kappa: NotRequired[float]
    grid: NotRequired[GridInfo]
    init_grid: NotRequired[GridInfo]
    prev_traffic: NotRequired[TrafficInfo]
    prev_noise: NotRequired[PrevNoiseInfo]


class SweepInfo(TypedDict):
    axis: SweepAxis
    values: list[Any]


class ExperimentInfo(TypedDict):
    name: str
    trials: int
    seed: int
    estimators: list[Estimator]
    scenario: ScenarioInfo
    sweep: NotRequired[SweepInfo]
    bootstrap_resamples: NotRequired[int]


@dataclass(frozen=True, kw_only=True)
class ExperimentSpec:
    name: str
    points: tuple[tuple[str, ScenarioInfo], ...]
    trials: int
    seed: int
    estimators: tuple[Estimator, ...] = ('sage', 'genie')
    bootstrap_resamples: int = 1000

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f'Experiment needs at least one trial, got {self.trials}')
        if not self.points:
            raise ValueError('Experiment has no configuration points')
