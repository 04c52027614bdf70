import heapq
import itertools
import logging
import math
import numpy as np
from collections import deque
from dataclasses import dataclass, field
from os import PathLike
from numpy.typing import ArrayLike
from ptp_csoe.exceptions import ModelViolationError
from ptp_csoe.types import FloatArray, Direction

logger = logging.getLogger(__name__)

BYTE = 8
DEFAULT_SIZE_MIX = ((64 * BYTE, 0.5), (576 * BYTE, 0.3), (1518 * BYTE, 0.2))
CANONICAL_LOADS = (0.2, 0.4, 0.6, 0.8)
_SAMPLE_BLOCK = 100_000


@dataclass(frozen=True, kw_only=True)
class SwitchCascadeConfig:
    """
    Chain of store-and-forward switches between master and slave. Sync packets have strict non-preemptive
    priority over background traffic, which is injected afresh at every switch
    """
    num_switches: int = 10
    link_rate: float = 1e9
    background_load: float = 0.6
    sync_packet_bits: float = 90 * BYTE
    background_size_mix: tuple[tuple[float, float], ...] = DEFAULT_SIZE_MIX

    def __post_init__(self):
        object.__setattr__(self, 'background_size_mix', tuple(tuple(item) for item in self.background_size_mix))

        if self.num_switches < 1:
            raise ValueError(f'Cascade needs at least one switch, got {self.num_switches}')
        if self.link_rate <= 0:
            raise ValueError(f'Link rate must be positive, got {self.link_rate}')
        if not 0 < self.background_load < 1:
            raise ValueError(f'Background load must lie in (0, 1), got {self.background_load}')
        if self.sync_packet_bits <= 0:
            raise ValueError(f'Sync packet size must be positive, got {self.sync_packet_bits}')
        if not self.background_size_mix:
            raise ValueError('Background size mix is empty')

        sizes, probabilities = self.sizes, self.probabilities
        if (sizes <= 0).any() or (probabilities < 0).any():
            raise ValueError(f'Invalid background size mix {self.background_size_mix}')
        if not math.isclose(probabilities.sum(), 1.0, abs_tol=1e-12):
            raise ValueError(f'Size mix probabilities sum to {probabilities.sum()}, expected 1')

    @property
    def sizes(self) -> FloatArray:
        return np.array([size for size, _ in self.background_size_mix], dtype=float)

    @property
    def probabilities(self) -> FloatArray:
        return np.array([probability for _, probability in self.background_size_mix], dtype=float)

    @property
    def mean_size(self) -> float:
        return float(self.sizes @ self.probabilities)

    @property
    def residual_size_probabilities(self) -> FloatArray:
        """
        Size distribution of the background packet found in service: larger packets occupy the link longer,
        so they are picked in proportion to probability times size
        """
        weights = self.sizes * self.probabilities
        return weights / weights.sum()

    @property
    def sync_transmission_time(self) -> float:
        return self.sync_packet_bits / self.link_rate

    @property
    def min_delay(self) -> float:
        return self.num_switches * self.sync_transmission_time

    def with_load(self, load: float) -> 'SwitchCascadeConfig':
        return SwitchCascadeConfig(
            num_switches=self.num_switches,
            link_rate=self.link_rate,
            background_load=load,
            sync_packet_bits=self.sync_packet_bits,
            background_size_mix=self.background_size_mix
        )


def sample_delays(config: SwitchCascadeConfig, size: int, rng: np.random.Generator) -> FloatArray:
    """
    Draws i.i.d. end-to-end queuing delays of sync packets. At every switch the link is busy with probability equal
    to the background load; a busy link delays the sync packet by the residual transmission time of the background
    packet in service.

    :param config: Cascade description
    :param size: Number of delays to draw
    :param rng: Caller-owned random stream
    :return: Delays in seconds
    """
    sizes = config.sizes
    picks_p = config.residual_size_probabilities
    switches = config.num_switches
    delays = np.empty(size)

    for start in range(0, size, _SAMPLE_BLOCK):
        count = min(_SAMPLE_BLOCK, size - start)
        busy = rng.random((count, switches)) < config.background_load
        picks = rng.choice(sizes.size, size=(count, switches), p=picks_p)
        residual = rng.random((count, switches)) * sizes[picks] / config.link_rate
        delays[start:start + count] = config.min_delay + np.where(busy, residual, 0.0).sum(axis=1)

    return delays


def sample_delay(config: SwitchCascadeConfig, rng: np.random.Generator) -> float:
    return float(sample_delays(config, 1, rng)[0])


@dataclass(frozen=True, kw_only=True)
class CascadeDelaySource:
    """
    Per-path, per-direction delay source for timestamp generation. Forward and reverse directions may run through
    differently loaded cascades
    """
    forward: tuple[SwitchCascadeConfig, ...]
    reverse: tuple[SwitchCascadeConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, 'forward', tuple(self.forward))
        object.__setattr__(self, 'reverse', tuple(self.reverse))
        if len(self.forward) != len(self.reverse):
            raise ValueError(f'Got {len(self.forward)} forward and {len(self.reverse)} reverse cascades')

    @classmethod
    def uniform(cls, config: SwitchCascadeConfig, num_paths: int) -> 'CascadeDelaySource':
        return cls(forward=(config,) * num_paths, reverse=(config,) * num_paths)

    def config(self, path: int, direction: Direction) -> SwitchCascadeConfig:
        return self.forward[path] if direction == 'forward' else self.reverse[path]

    def __call__(self, path: int, direction: Direction, size: int, rng: np.random.Generator) -> FloatArray:
        return sample_delays(self.config(path, direction), size, rng)


@dataclass
class _Packet:
    bits: float
    injected_at: float
    is_sync: bool = False


@dataclass
class _Switch:
    busy: bool = False
    high: deque = field(default_factory=deque)
    low: deque = field(default_factory=deque)


class CascadeEventSimulator:
    """
    Event-list simulation of the same cascade, kept as the reference the residual-life sampler is checked against.
    Background packets arrive as a Poisson stream at every switch and queue FIFO behind a strict-priority class of
    sync packets; sync packets are injected at the first switch every probe_interval seconds.
    """

    def __init__(self, config: SwitchCascadeConfig, probe_interval: float = 100e-6, warmup: float = 1e-3):
        if probe_interval <= 0 or warmup < 0:
            raise ValueError(f'Invalid probe interval {probe_interval} or warmup {warmup}')
        self.__config = config
        self.__probe_interval = probe_interval
        self.__warmup = warmup

    @property
    def config(self) -> SwitchCascadeConfig:
        return self.__config

    def run(self, num_probes: int, rng: np.random.Generator) -> FloatArray:
        """
        :param num_probes: Number of sync packets to push through the cascade
        :param rng: Caller-owned random stream
        :return: End-to-end delay of every sync packet, in injection order
        """
        if num_probes == 0:
            return np.empty(0)

        config = self.__config
        arrival_rate = config.background_load * config.link_rate / config.mean_size
        sizes, probabilities = config.sizes, config.probabilities
        switches = [_Switch() for _ in range(config.num_switches)]
        events: list = []
        sequence = itertools.count()
        delays = np.empty(num_probes)
        recorded = 0

        def push(time: float, kind: str, index: int, packet: _Packet | None = None):
            heapq.heappush(events, (time, next(sequence), kind, index, packet))

        def start(index: int, now: float, packet: _Packet):
            switches[index].busy = True
            push(now + packet.bits / config.link_rate, 'departure', index, packet)

        def arrive(index: int, now: float, packet: _Packet):
            switch = switches[index]
            if not switch.busy:
                start(index, now, packet)
            elif packet.is_sync:
                switch.high.append(packet)
            else:
                switch.low.append(packet)

        for index in range(config.num_switches):
            push(rng.exponential(1 / arrival_rate), 'background', index)
        push(self.__warmup, 'sync', 0)

        while recorded < num_probes:
            now, _, kind, index, packet = heapq.heappop(events)

            if kind == 'background':
                bits = float(rng.choice(sizes, p=probabilities))
                arrive(index, now, _Packet(bits=bits, injected_at=now))
                push(now + rng.exponential(1 / arrival_rate), 'background', index)

            elif kind == 'sync':
                arrive(0, now, _Packet(bits=config.sync_packet_bits, injected_at=now, is_sync=True))
                push(now + self.__probe_interval, 'sync', 0)

            else:
                switch = switches[index]
                switch.busy = False

                if packet.is_sync:
                    if index + 1 < config.num_switches:
                        arrive(index + 1, now, packet)
                    else:
                        delays[recorded] = now - packet.injected_at
                        recorded += 1

                if switch.high:
                    start(index, now, switch.high.popleft())
                elif switch.low:
                    start(index, now, switch.low.popleft())

        logger.debug(f'Event simulation finished at t={now:.6f} s after {next(sequence)} events')
        return delays


@dataclass(frozen=True, kw_only=True)
class EmpiricalPdf:
    """
    Piecewise-constant density on equal-width bins. Zero outside [bin_edges[0], bin_edges[-1]]
    """
    bin_edges: FloatArray
    densities: FloatArray
    sample_count: int

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=float)
        densities = np.array(self.densities, dtype=float)

        if edges.ndim != 1 or densities.ndim != 1 or edges.size != densities.size + 1:
            raise ValueError(f'Got {edges.size} edges for {densities.size} densities')
        if not (np.diff(edges) > 0).all():
            raise ValueError('Bin edges must be strictly increasing')
        if (densities < 0).any():
            raise ValueError('Densities must be non-negative')
        if edges[0] <= 0:
            raise ModelViolationError(f'Delay pdf support starts at {edges[0]}, queuing delays are strictly positive')

        mass = float(densities @ np.diff(edges))
        if not math.isclose(mass, 1.0, abs_tol=1e-9):
            raise ValueError(f'Density integrates to {mass}, expected 1')

        edges.setflags(write=False)
        densities.setflags(write=False)
        object.__setattr__(self, 'bin_edges', edges)
        object.__setattr__(self, 'densities', densities)

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def centers(self) -> FloatArray:
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2

    @property
    def mean(self) -> float:
        return float((self.centers * self.densities) @ np.diff(self.bin_edges))

    def support(self) -> tuple[float, float]:
        return float(self.bin_edges[0]), float(self.bin_edges[-1])

    def pdf(self, x: ArrayLike) -> FloatArray:
        x = np.asarray(x, dtype=float)
        edges = self.bin_edges
        index = np.searchsorted(edges, x, side='right') - 1
        index = np.where(x == edges[-1], edges.size - 2, index)
        inside = (index >= 0) & (index < self.densities.size)
        return np.where(inside, self.densities[np.clip(index, 0, self.densities.size - 1)], 0.0)

    def logpdf(self, x: ArrayLike) -> FloatArray:
        with np.errstate(divide='ignore'):
            return np.log(self.pdf(x))

    def save(self, path: str | PathLike):
        """
        Writes the histogram as two columns, bin center in seconds and density per second
        """
        header = f'bin_width={self.bin_width!r} sample_count={self.sample_count}'
        np.savetxt(path, np.column_stack([self.centers, self.densities]), header=header)

    @classmethod
    def load(cls, path: str | PathLike) -> 'EmpiricalPdf':
        with open(path) as file:
            header = dict(item.split('=') for item in file.readline().lstrip('#').split())

        width = float(header['bin_width'])
        table = np.loadtxt(path, ndmin=2)
        centers, densities = table[:, 0], table[:, 1]
        edges = np.append(centers - width / 2, centers[-1] + width / 2)
        densities = densities / (densities @ np.diff(edges))
        return cls(bin_edges=edges, densities=densities, sample_count=int(header['sample_count']))


def build_empirical_pdf(samples: ArrayLike, bin_width: float) -> EmpiricalPdf:
    """
    Normalized histogram of queuing-delay samples with bins aligned to multiples of bin_width

    :param samples: Positive delay samples in seconds
    :param bin_width: Width of a bin in seconds
    :return: Instance of EmpiricalPdf
    """
    samples = np.asarray(samples, dtype=float).ravel()

    if samples.size == 0:
        raise ValueError('Can not build a pdf from an empty sample list')
    if bin_width <= 0:
        raise ValueError(f'Bin width must be positive, got {bin_width}')
    if not np.isfinite(samples).all() or (samples <= 0).any():
        raise ModelViolationError('Queuing delay samples must be finite and strictly positive')

    low, high = samples.min(), samples.max()
    start = math.floor(low / bin_width) * bin_width
    if start > low:
        start -= bin_width
    if start <= 0:
        raise ValueError(f'Bin width {bin_width} is coarser than the smallest delay {low}')

    num_bins = int(math.floor((high - start) / bin_width)) + 1
    edges = start + bin_width * np.arange(num_bins + 1)
    if edges[-1] <= high:
        edges = np.append(edges, edges[-1] + bin_width)

    counts, _ = np.histogram(samples, bins=edges)
    densities = counts / (samples.size * np.diff(edges))
    return EmpiricalPdf(bin_edges=edges, densities=densities, sample_count=int(samples.size))
