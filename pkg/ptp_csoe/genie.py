import logging
import math
import numpy as np
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Protocol
from numpy.typing import ArrayLike
from scipy.special import logsumexp
from ptp_csoe.exceptions import GridTooSmallError, ModelViolationError
from ptp_csoe.types import FloatArray, ExchangeRecords

logger = logging.getLogger(__name__)


class DelayPdf(Protocol):
    @property
    def mean(self) -> float: ...

    def logpdf(self, x: ArrayLike) -> FloatArray: ...

    def support(self) -> tuple[float, float]: ...


class _Lattice(NamedTuple):
    start: float
    step: float
    count: int

    def values(self, index: ArrayLike) -> FloatArray:
        return self.start + self.step * np.asarray(index, dtype=float)

    def nearest(self, value: float) -> int:
        if not math.isfinite(value):
            return self.count // 2
        return int(np.clip(np.rint((value - self.start) / self.step), 0, self.count - 1))

    def index_range(self, low: float, high: float) -> tuple[int, int]:
        """
        First and last index whose value lies in [low, high]. Empty when first > last
        """
        first = np.clip(np.ceil((low - self.start) / self.step - 1e-9), 0, self.count)
        last = np.clip(np.floor((high - self.start) / self.step + 1e-9), -1, self.count - 1)
        return int(first), int(last)


@dataclass(frozen=True, kw_only=True)
class IntegrationGrid:
    """
    Riemann-sum lattice. The skew axis covers phi_range with phi_step, the linear axis linear_range (seconds)
    with linear_step and is shared by the offset, every path delay and every asymmetry. Cells whose
    log-integrand lies more than prune_nats below the best cell found are skipped
    """
    phi_range: tuple[float, float] = (0.5, 2.0)
    phi_step: float = 1e-3
    linear_range: tuple[float, float] = (-10e-6, 10e-6)
    linear_step: float = 1e-8
    prune_nats: float = 25.0
    chunk: int = 64

    def __post_init__(self):
        object.__setattr__(self, 'phi_range', tuple(float(value) for value in self.phi_range))
        object.__setattr__(self, 'linear_range', tuple(float(value) for value in self.linear_range))

        for name in ('phi_range', 'linear_range'):
            low, high = getattr(self, name)
            if not (math.isfinite(low) and math.isfinite(high)) or high < low:
                raise ValueError(f'{name} must be a finite, non-decreasing pair, got {(low, high)}')
        if self.phi_range[0] <= 0:
            raise ValueError(f'Skew range must be positive, got {self.phi_range}')
        if self.phi_step <= 0 or self.linear_step <= 0:
            raise ValueError(f'Grid steps must be positive, got {self.phi_step} and {self.linear_step}')
        if self.prune_nats <= 0 or self.chunk < 1:
            raise ValueError(f'Invalid pruning setup: prune_nats={self.prune_nats}, chunk={self.chunk}')

    @staticmethod
    def _lattice(bounds: tuple[float, float], step: float) -> _Lattice:
        return _Lattice(bounds[0], step, int(math.floor((bounds[1] - bounds[0]) / step + 1e-9)) + 1)

    @property
    def phi_lattice(self) -> _Lattice:
        return self._lattice(self.phi_range, self.phi_step)

    @property
    def linear_lattice(self) -> _Lattice:
        return self._lattice(self.linear_range, self.linear_step)

    @property
    def phi_values(self) -> FloatArray:
        lattice = self.phi_lattice
        return lattice.values(np.arange(lattice.count))

    @property
    def linear_values(self) -> FloatArray:
        lattice = self.linear_lattice
        return lattice.values(np.arange(lattice.count))

    def refined(self, factor: int) -> 'IntegrationGrid':
        return replace(self, phi_step=self.phi_step / factor, linear_step=self.linear_step / factor)

    def scaled(self, factor: float) -> 'IntegrationGrid':
        """
        Grid for data whose slave timestamps are multiplied by factor: the skew axis is scaled, the linear axis kept
        """
        low, high = self.phi_range
        return replace(self, phi_range=(low * factor, high * factor), phi_step=self.phi_step * factor)


@dataclass(frozen=True, kw_only=True)
class GenieInputs:
    """
    Data plus everything the genie knows: which paths are asymmetric and the true forward and reverse
    queuing-delay pdf of every path
    """
    records: ExchangeRecords
    known_eta: tuple[bool, ...]
    delay_pdfs: tuple[tuple[DelayPdf, DelayPdf], ...]
    grid: IntegrationGrid = IntegrationGrid()

    def __post_init__(self):
        object.__setattr__(self, 'known_eta', tuple(bool(flag) for flag in self.known_eta))
        object.__setattr__(self, 'delay_pdfs', tuple(tuple(pair) for pair in self.delay_pdfs))

        num_paths = self.records.num_paths
        if len(self.known_eta) != num_paths or len(self.delay_pdfs) != num_paths:
            raise ValueError(
                f'Got {len(self.known_eta)} path states and {len(self.delay_pdfs)} pdf pairs for {num_paths} paths'
            )
        if any(len(pair) != 2 for pair in self.delay_pdfs):
            raise ValueError('Every path needs a forward and a reverse delay pdf')
        if 2 * self.num_asymmetric >= num_paths:
            raise ModelViolationError(
                f'{self.num_asymmetric} of {num_paths} paths are asymmetric, fewer than half are allowed'
            )

    @property
    def num_asymmetric(self) -> int:
        return sum(self.known_eta)

    @property
    def skew_exponent(self) -> int:
        """
        Power of 1 / skew in the posterior weight of the offset and of the normalizer
        """
        records = self.records
        return 2 * records.num_paths * records.num_exchanges - records.num_paths - self.num_asymmetric + 3


class GenieEstimate(NamedTuple):
    offset: float
    skew: float
    interior_mass: float


def gamma_terms(params: tuple[float, float, ArrayLike, ArrayLike], inputs: GenieInputs) -> float:
    """
    Log of the product of every forward and reverse queuing-delay density implied by the parameters.
    Asymmetries of paths known to be symmetric are ignored

    :param params: Skew, offset, per-path deterministic delays and per-path asymmetries
    :param inputs: Instance of GenieInputs
    :return: Finite value, or -inf when a delay falls outside a pdf support
    """
    skew, offset, delays, asymmetries = params
    delays = np.asarray(delays, dtype=float)
    asymmetries = np.asarray(asymmetries, dtype=float)
    records = inputs.records
    total = 0.0

    for i, (fwd_pdf, rev_pdf) in enumerate(inputs.delay_pdfs):
        asymmetry = asymmetries[i] if inputs.known_eta[i] else 0.0
        fwd = (records.t2[i] - offset) / skew - records.t1[i] - delays[i] - asymmetry
        rev = records.t4[i] - delays[i] - (records.t3[i] - offset) / skew
        total += fwd_pdf.logpdf(fwd).sum() + rev_pdf.logpdf(rev).sum()

    return float(total)


def _log_total(values: FloatArray) -> float:
    if values.size == 0 or not np.isfinite(values.max()):
        return -math.inf
    return float(logsumexp(values))


def _expand(
        evaluate: Callable[[np.ndarray], FloatArray],
        seed: int,
        low: int,
        high: int,
        prune_nats: float,
        chunk: int
) -> tuple[int, FloatArray]:
    """
    Evaluates a log-integrand on a contiguous run of lattice indices in [low, high] that grows outward from seed.
    A side stops at its bound or after a chunk whose best value is more than prune_nats below the best value seen.

    :return: First evaluated index and the values from there on
    """
    seed = min(max(seed, low), high)
    centre = np.asarray(evaluate(np.arange(seed, seed + 1)), dtype=float)
    best = centre.max()
    left, right = seed, seed + 1
    lefts, rights = [], [centre]
    grow_left, grow_right = left > low, right <= high

    while grow_left or grow_right:
        if grow_right:
            stop = min(right + chunk, high + 1)
            values = np.asarray(evaluate(np.arange(right, stop)), dtype=float)
            rights.append(values)
            right = stop
            best = max(best, values.max())
            grow_right = right <= high and not values.max() < best - prune_nats

        if grow_left:
            start = max(left - chunk, low)
            values = np.asarray(evaluate(np.arange(start, left)), dtype=float)
            lefts.append(values)
            left = start
            best = max(best, values.max())
            grow_left = left > low and not values.max() < best - prune_nats

    return left, np.concatenate(lefts[::-1] + rights)


def _spread_interval(a: FloatArray, b: FloatArray, width: float) -> tuple[float, float]:
    """
    Interval of v for which the spread (max - min) of v * a - b stays within width
    """
    da = a[:, None] - a[None, :]
    db = b[:, None] - b[None, :]
    if (np.abs(db[da == 0]) > width).any():
        return math.inf, -math.inf

    rising = da > 0
    low = ((db[rising] - width) / da[rising]).max(initial=-math.inf)
    high = ((db[rising] + width) / da[rising]).min(initial=math.inf)
    return float(low), float(high)


def _skew_interval(constraints: list[tuple[FloatArray, FloatArray, float]]) -> tuple[float, float]:
    """
    Skew values for which every (receive, send, support width) triple can be explained by some delay offset.
    Receive times are divided by the skew
    """
    low, high = 0.0, math.inf
    for receive, send, width in constraints:
        v_low, v_high = _spread_interval(receive, send, width)
        low, high = max(low, v_low), min(high, v_high)

    if high <= 0 or high < low:
        return math.inf, -math.inf
    return (1 / high if math.isfinite(high) else 0.0), (1 / low if low > 0 else math.inf)


def _pooled_slope(send: list[FloatArray], receive: list[FloatArray]) -> float:
    """
    Least-squares slope of receive on send times, pooled over groups with their own intercepts
    """
    x = np.concatenate([row - row.mean() for row in send])
    y = np.concatenate([row - row.mean() for row in receive])
    denominator = float(x @ x)
    return float(x @ y) / denominator if denominator > 0 else 1.0


def _width(pdf: DelayPdf) -> float:
    low, high = pdf.support()
    return high - low


class _Cell(NamedTuple):
    log_mass: float
    log_inner: float
    offset_mean: float


class _PathSum(NamedTuple):
    log_total: float
    log_inner: float


_EMPTY_PATH = _PathSum(-math.inf, -math.inf)
_EMPTY_CELL = _Cell(-math.inf, -math.inf, math.nan)


class _Posterior:
    """
    Riemann sums of the genie posterior. For fixed (skew, offset) the integrand factorizes over paths, and for an
    asymmetric path the sum over the asymmetry becomes a window sum over the lattice of delay plus asymmetry
    """

    def __init__(self, inputs: GenieInputs):
        self._inputs = inputs
        self._grid = inputs.grid
        self._linear = inputs.grid.linear_lattice
        self._sums = _Lattice(2 * self._linear.start, self._linear.step, 2 * self._linear.count - 1)
        self._supports = [(fwd.support(), rev.support()) for fwd, rev in inputs.delay_pdfs]

    def _symmetric(self, path: int, x: FloatArray, z: FloatArray, u: float) -> _PathSum:
        fwd_pdf, rev_pdf = self._inputs.delay_pdfs[path]
        (fwd_low, fwd_high), (rev_low, rev_high) = self._supports[path]
        lattice, grid = self._linear, self._grid

        first, last = lattice.index_range(
            max(x.max() - u - fwd_high, z.max() + u - rev_high),
            min(x.min() - u - fwd_low, z.min() + u - rev_low)
        )
        if first > last:
            return _EMPTY_PATH

        def evaluate(index: np.ndarray) -> FloatArray:
            delay = lattice.values(index)[:, None]
            return fwd_pdf.logpdf(x - u - delay).sum(axis=1) + rev_pdf.logpdf(z + u - delay).sum(axis=1)

        seed = lattice.nearest(((x.mean() - fwd_pdf.mean - u) + (z.mean() + u - rev_pdf.mean)) / 2)
        start, values = _expand(evaluate, seed, first, last, grid.prune_nats, grid.chunk)
        index = start + np.arange(values.size)
        inner = values[(index > 0) & (index < lattice.count - 1)]
        return _PathSum(_log_total(values), _log_total(inner))

    def _asymmetric(self, path: int, x: FloatArray, z: FloatArray, u: float) -> _PathSum:
        fwd_pdf, rev_pdf = self._inputs.delay_pdfs[path]
        (fwd_low, fwd_high), (rev_low, rev_high) = self._supports[path]
        lattice, sums, grid = self._linear, self._sums, self._grid
        size = lattice.count

        sum_first, sum_last = sums.index_range(x.max() - u - fwd_high, x.min() - u - fwd_low)
        first, last = lattice.index_range(z.max() + u - rev_high, z.min() + u - rev_low)
        if sum_first > sum_last or first > last:
            return _EMPTY_PATH

        def forward(index: np.ndarray) -> FloatArray:
            return fwd_pdf.logpdf(x - u - sums.values(index)[:, None]).sum(axis=1)

        sum_start, fwd_values = _expand(
            forward, sums.nearest(x.mean() - u - fwd_pdf.mean), sum_first, sum_last, grid.prune_nats, grid.chunk
        )
        peak = fwd_values.max()
        if not np.isfinite(peak):
            return _EMPTY_PATH

        cumulative = np.concatenate(([0.0], np.cumsum(np.exp(fwd_values - peak))))

        def window(low: np.ndarray, high: np.ndarray) -> FloatArray:
            low = np.clip(low - sum_start, 0, fwd_values.size)
            high = np.clip(high + 1 - sum_start, 0, fwd_values.size)
            with np.errstate(divide='ignore'):
                return np.log(np.maximum(cumulative[high] - cumulative[low], 0.0))

        def reverse(index: np.ndarray) -> FloatArray:
            return rev_pdf.logpdf(z + u - lattice.values(index)[:, None]).sum(axis=1)

        def evaluate(index: np.ndarray) -> FloatArray:
            return reverse(index) + window(index, index + size - 1)

        start, values = _expand(
            evaluate, lattice.nearest(z.mean() + u - rev_pdf.mean), first, last, grid.prune_nats, grid.chunk
        )
        index = start + np.arange(values.size)
        index = index[(index > 0) & (index < size - 1)]
        inner = reverse(index) + window(index + 1, index + size - 2)
        return _PathSum(peak + _log_total(values), peak + _log_total(inner))

    def _offset_range(self, skew: float, xs: list[FloatArray], zs: list[FloatArray]) -> tuple[float, float]:
        low, high = -math.inf, math.inf
        for i, asymmetric in enumerate(self._inputs.known_eta):
            if asymmetric:
                continue
            (fwd_low, fwd_high), (rev_low, rev_high) = self._supports[i]
            low = max(low, (xs[i].max() - zs[i].min() - fwd_high + rev_low) / 2)
            high = min(high, (xs[i].min() - zs[i].max() - fwd_low + rev_high) / 2)
        return skew * low, skew * high

    def cell(self, skew: float) -> _Cell:
        records, inputs, lattice = self._inputs.records, self._inputs, self._linear
        xs = [records.t2[i] / skew - records.t1[i] for i in range(records.num_paths)]
        zs = [records.t4[i] - records.t3[i] / skew for i in range(records.num_paths)]

        first, last = lattice.index_range(*self._offset_range(skew, xs, zs))
        if first > last:
            return _EMPTY_CELL

        seeds = [((xs[i].mean() - pdfs[0].mean) - (zs[i].mean() - pdfs[1].mean)) / 2
                 for i, pdfs in enumerate(inputs.delay_pdfs) if not inputs.known_eta[i]]
        inner_rows = {}

        def evaluate(index: np.ndarray) -> FloatArray:
            rows = np.empty(index.size)
            for position, m in enumerate(index):
                u = float(lattice.values(m)) / skew
                total, inner = 0.0, 0.0
                for i, asymmetric in enumerate(inputs.known_eta):
                    path_sum = (self._asymmetric if asymmetric else self._symmetric)(i, xs[i], zs[i], u)
                    total += path_sum.log_total
                    inner += path_sum.log_inner
                    if total == -math.inf:
                        inner = -math.inf
                        break
                rows[position] = total
                inner_rows[int(m)] = inner
            return rows

        seed = lattice.nearest(skew * float(np.median(seeds)))
        start, rows = _expand(evaluate, seed, first, last, self._grid.prune_nats, self._grid.chunk)
        log_mass = _log_total(rows)
        if log_mass == -math.inf:
            return _EMPTY_CELL

        index = start + np.arange(rows.size)
        weights = np.exp(rows - rows.max())
        offset_mean = float(weights @ lattice.values(index) / weights.sum())
        inner = np.array([inner_rows[int(m)] for m in index if 0 < m < lattice.count - 1])
        return _Cell(log_mass, _log_total(inner), offset_mean)

    def skew_range(self) -> tuple[int, int]:
        records = self._inputs.records
        constraints = []
        for i, (fwd_pdf, rev_pdf) in enumerate(self._inputs.delay_pdfs):
            constraints.append((records.t2[i], records.t1[i], _width(fwd_pdf)))
            constraints.append((records.t3[i], records.t4[i], _width(rev_pdf)))
        return self._grid.phi_lattice.index_range(*_skew_interval(constraints))

    def skew_seed(self) -> int:
        records = self._inputs.records
        slope = _pooled_slope(
            [*records.t1, *records.t4],
            [*records.t2, *records.t3]
        )
        return self._grid.phi_lattice.nearest(slope)


def _integrate(inputs: GenieInputs) -> GenieEstimate:
    posterior = _Posterior(inputs)
    phi_lattice = inputs.grid.phi_lattice
    exponent = inputs.skew_exponent

    first, last = posterior.skew_range()
    if first > last:
        raise GridTooSmallError(
            f'No skew in {inputs.grid.phi_range} is consistent with the data and the delay pdf supports, '
            f'widen the grid limits'
        )

    cells = {}

    def evaluate(index: np.ndarray) -> FloatArray:
        weights = np.empty(index.size)
        for position, k in enumerate(index):
            skew = float(phi_lattice.values(k))
            cells[int(k)] = posterior.cell(skew)
            weights[position] = cells[int(k)].log_mass - exponent * math.log(skew)
        return weights

    start, log_weights = _expand(evaluate, posterior.skew_seed(), first, last, inputs.grid.prune_nats, 1)
    shift = log_weights.max()
    if not np.isfinite(shift):
        raise GridTooSmallError('The grid misses all posterior mass, widen the grid limits')

    index = start + np.arange(log_weights.size)
    skews = phi_lattice.values(index)
    weights = np.exp(log_weights - shift)
    total = weights.sum()
    offsets = np.array([cells[int(k)].offset_mean for k in index])
    offsets = np.where(weights > 0, offsets, 0.0)

    inner = np.array([
        cells[int(k)].log_inner - exponent * math.log(skew) if 0 < k < phi_lattice.count - 1 else -math.inf
        for k, skew in zip(index, skews)
    ])
    interior_mass = float(np.exp(inner - shift).sum() / total)

    logger.debug(f'Genie evaluated {index.size} skew cells, interior mass {interior_mass}')
    return GenieEstimate(float(weights @ offsets / total), float(weights @ skews / total), interior_mass)


def posterior_mass_diagnostic(inputs: GenieInputs) -> float:
    """
    Fraction of the posterior mass carried by cells off the grid boundary in every dimension
    """
    return _integrate(inputs).interior_mass


def estimate(inputs: GenieInputs) -> GenieEstimate:
    """
    Posterior-mean offset and skew under the invariant prior, given the true path states and delay pdfs.

    :param inputs: Instance of GenieInputs
    :return: Offset, skew and the interior mass fraction of the grid
    """
    result = _integrate(inputs)

    if result.interior_mass <= 1e-3:
        raise GridTooSmallError(
            f'{1 - result.interior_mass:.2%} of the posterior mass lies on the grid boundary, widen the grid limits'
        )
    if result.interior_mass < 0.999:
        logger.warning(f'{1 - result.interior_mass:.3%} of the genie posterior mass lies on the grid boundary')

    return result
