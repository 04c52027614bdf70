import csv
import logging
import math
import numpy as np
from dataclasses import dataclass, replace
from os import PathLike
from typing import NamedTuple
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, xlogy
from scipy.stats import norm
from ptp_csoe.exceptions import NonFiniteLikelihoodError, LikelihoodDecreaseError
from ptp_csoe.gmm import GmmParams, STD_FLOOR, STARVED_MASS, _likelihood_decreased
from ptp_csoe.types import FloatArray, ClockParams, WindowData, SkewRootConvention, _readonly

logger = logging.getLogger(__name__)


@dataclass(frozen=True, kw_only=True)
class SageState:
    """
    Every parameter the relaxed likelihood depends on: clock skew and offset, per-path deterministic delay,
    asymmetry and probability of being asymmetric, and per-path forward and reverse delay mixtures
    """
    clock: ClockParams
    det_delays: FloatArray
    asymmetries: FloatArray
    pi: FloatArray
    forward: tuple[GmmParams, ...]
    reverse: tuple[GmmParams, ...]

    def __post_init__(self):
        for name in ('det_delays', 'asymmetries', 'pi'):
            array = _readonly(getattr(self, name), 1, name)
            if not np.isfinite(array).all():
                raise ValueError(f'{name} must be finite')
            object.__setattr__(self, name, array)

        object.__setattr__(self, 'forward', tuple(self.forward))
        object.__setattr__(self, 'reverse', tuple(self.reverse))

        sizes = {self.det_delays.size, self.asymmetries.size, self.pi.size, len(self.forward), len(self.reverse)}
        if len(sizes) != 1:
            raise ValueError(f'Per-path parameters disagree on the number of paths: {sorted(sizes)}')
        if ((self.pi < 0) | (self.pi > 1)).any():
            raise ValueError(f'Asymmetry probabilities {self.pi} must lie in [0, 1]')

    @property
    def num_paths(self) -> int:
        return self.pi.size


@dataclass(frozen=True, kw_only=True)
class Responsibilities:
    """
    Posterior weights of the hidden path state and mixture components. Per path, chi1 and chi0 have shape
    (exchanges, forward components, reverse components) and a_tilde (previous exchanges, forward, reverse).
    log_norm and log_norm_prev hold the logs of the per-exchange normalizers
    """
    chi1: tuple[FloatArray, ...]
    chi0: tuple[FloatArray, ...]
    a_tilde: tuple[FloatArray, ...]
    log_norm: FloatArray
    log_norm_prev: FloatArray


class TraceEntry(NamedTuple):
    iteration: int
    log_likelihood: float
    skew: float
    offset: float
    pi: tuple[float, ...]


class SageResult(NamedTuple):
    state: SageState
    trace: tuple[TraceEntry, ...]
    converged: bool
    iterations: int


class MixingUpdate(NamedTuple):
    pi: FloatArray
    forward_weights: tuple[FloatArray, ...]
    reverse_weights: tuple[FloatArray, ...]


class ComponentUpdate(NamedTuple):
    forward: tuple[FloatArray, ...]
    reverse: tuple[FloatArray, ...]
    frozen: bool


class AsymmetryUpdate(NamedTuple):
    asymmetries: FloatArray
    frozen: tuple[bool, ...]


class SkewUpdate(NamedTuple):
    skew: float
    fallback: bool


class _Residuals(NamedTuple):
    asym: FloatArray
    sym: FloatArray
    rev: FloatArray


def _residuals(state: SageState, data: WindowData, path: int) -> _Residuals:
    records = data.records
    skew, offset = state.clock.skew, state.clock.offset
    sym = (records.t2[path] - offset) / skew - state.det_delays[path] - records.t1[path]
    rev = records.t4[path] - state.det_delays[path] + (offset - records.t3[path]) / skew
    return _Residuals(sym - state.asymmetries[path], sym, rev)


def _expectation(state: SageState, data: WindowData) -> tuple[Responsibilities, float]:
    chi1, chi0, a_tilde = [], [], []
    log_norm = np.empty((data.num_paths, data.num_exchanges))
    log_norm_prev = np.empty((data.num_paths, data.num_prev))

    with np.errstate(divide='ignore'):
        log_pi = np.log(state.pi)
        log_rest = np.log1p(-state.pi)

    for i in range(data.num_paths):
        fwd, rev = state.forward[i], state.reverse[i]
        res = _residuals(state, data, i)
        reverse_terms = rev.component_logpdf(res.rev)[:, None, :]

        log1 = log_pi[i] + fwd.component_logpdf(res.asym)[:, :, None] + reverse_terms
        log0 = log_rest[i] + fwd.component_logpdf(res.sym)[:, :, None] + reverse_terms
        log_norm[i] = np.logaddexp(logsumexp(log1, axis=(1, 2)), logsumexp(log0, axis=(1, 2)))

        prev_fwd = fwd.component_logpdf(data.residuals.fwd[i])
        prev_rev = rev.component_logpdf(data.residuals.rev[i])
        log_prev = prev_fwd[:, :, None] + prev_rev[:, None, :]
        log_norm_prev[i] = logsumexp(prev_fwd, axis=1) + logsumexp(prev_rev, axis=1)

        for norms, window in ((log_norm[i], 'current'), (log_norm_prev[i], 'previous')):
            bad = np.flatnonzero(~np.isfinite(norms))
            if bad.size:
                raise NonFiniteLikelihoodError(
                    f'Non-finite likelihood term on path {i}, {window} window exchange {bad[0]}',
                    path=i,
                    exchange=int(bad[0])
                )

        chi1.append(np.exp(log1 - log_norm[i][:, None, None]))
        chi0.append(np.exp(log0 - log_norm[i][:, None, None]))
        a_tilde.append(np.exp(log_prev - log_norm_prev[i][:, None, None]))

    resp = Responsibilities(
        chi1=tuple(chi1),
        chi0=tuple(chi0),
        a_tilde=tuple(a_tilde),
        log_norm=log_norm,
        log_norm_prev=log_norm_prev
    )
    jacobian = 2 * data.num_paths * data.num_exchanges * math.log(state.clock.skew)
    return resp, float(log_norm.sum() + log_norm_prev.sum() - jacobian)


def incomplete_log_likelihood(state: SageState, data: WindowData) -> float:
    """
    Log-likelihood of the current and previous windows with the path states summed out
    """
    return _expectation(state, data)[1]


def e_step(state: SageState, data: WindowData) -> Responsibilities:
    return _expectation(state, data)[0]


def update_mixing(resp: Responsibilities) -> MixingUpdate:
    pi, forward, reverse = [], [], []

    for chi1, chi0, a_tilde in zip(resp.chi1, resp.chi0, resp.a_tilde):
        total = chi1.shape[0] + a_tilde.shape[0]
        both = chi1 + chi0
        pi.append(chi1.sum() / chi1.shape[0])

        alpha = (both.sum(axis=(0, 2)) + a_tilde.sum(axis=(0, 2))) / total
        beta = (both.sum(axis=(0, 1)) + a_tilde.sum(axis=(0, 1))) / total
        forward.append(alpha / alpha.sum())
        reverse.append(beta / beta.sum())

    return MixingUpdate(np.clip(pi, 0.0, 1.0), tuple(forward), tuple(reverse))


def update_means(resp: Responsibilities, state: SageState, data: WindowData) -> ComponentUpdate:
    forward, reverse = [], []
    frozen = False

    for i in range(data.num_paths):
        res = _residuals(state, data, i)
        chi1, chi0, a_tilde = resp.chi1[i], resp.chi0[i], resp.a_tilde[i]
        c1, c0, at = chi1.sum(axis=2), chi0.sum(axis=2), a_tilde.sum(axis=2)
        r, bt = (chi1 + chi0).sum(axis=1), a_tilde.sum(axis=1)

        mass = c1.sum(axis=0) + c0.sum(axis=0) + at.sum(axis=0)
        total = res.asym @ c1 + res.sym @ c0 + data.residuals.fwd[i] @ at
        forward.append(_safe_ratio(total, mass, state.forward[i].means))

        mass_rev = r.sum(axis=0) + bt.sum(axis=0)
        total_rev = res.rev @ r + data.residuals.rev[i] @ bt
        reverse.append(_safe_ratio(total_rev, mass_rev, state.reverse[i].means))

        frozen |= bool((mass < STARVED_MASS).any() or (mass_rev < STARVED_MASS).any())

    return ComponentUpdate(tuple(forward), tuple(reverse), frozen)


def update_variances(resp: Responsibilities, state: SageState, data: WindowData) -> ComponentUpdate:
    """
    Variance update around the current means, clamped at the variance floor
    """
    floor = STD_FLOOR ** 2
    forward, reverse = [], []
    frozen = False

    for i in range(data.num_paths):
        res = _residuals(state, data, i)
        mu1, mu2 = state.forward[i].means, state.reverse[i].means
        chi1, chi0, a_tilde = resp.chi1[i], resp.chi0[i], resp.a_tilde[i]
        c1, c0, at = chi1.sum(axis=2), chi0.sum(axis=2), a_tilde.sum(axis=2)
        r, bt = (chi1 + chi0).sum(axis=1), a_tilde.sum(axis=1)

        mass = c1.sum(axis=0) + c0.sum(axis=0) + at.sum(axis=0)
        total = ((c1 * (res.asym[:, None] - mu1) ** 2).sum(axis=0)
                 + (c0 * (res.sym[:, None] - mu1) ** 2).sum(axis=0)
                 + (at * (data.residuals.fwd[i][:, None] - mu1) ** 2).sum(axis=0))
        forward.append(np.maximum(_safe_ratio(total, mass, state.forward[i].variances), floor))

        mass_rev = r.sum(axis=0) + bt.sum(axis=0)
        total_rev = ((r * (res.rev[:, None] - mu2) ** 2).sum(axis=0)
                     + (bt * (data.residuals.rev[i][:, None] - mu2) ** 2).sum(axis=0))
        reverse.append(np.maximum(_safe_ratio(total_rev, mass_rev, state.reverse[i].variances), floor))

        frozen |= bool((mass < STARVED_MASS).any() or (mass_rev < STARVED_MASS).any())

    return ComponentUpdate(tuple(forward), tuple(reverse), frozen)


def _safe_ratio(total: FloatArray, mass: FloatArray, previous: FloatArray) -> FloatArray:
    starved = mass < STARVED_MASS
    return np.where(starved, previous, total / np.where(starved, 1.0, mass))


class _Weights(NamedTuple):
    c1: FloatArray
    c0: FloatArray
    r: FloatArray
    inv_var1: FloatArray
    inv_var2: FloatArray


def _weights(resp: Responsibilities, state: SageState, path: int) -> _Weights:
    chi1, chi0 = resp.chi1[path], resp.chi0[path]
    return _Weights(
        chi1.sum(axis=2),
        chi0.sum(axis=2),
        (chi1 + chi0).sum(axis=1),
        1 / state.forward[path].variances,
        1 / state.reverse[path].variances
    )


def update_path_delays(resp: Responsibilities, state: SageState, data: WindowData) -> FloatArray:
    records = data.records
    skew, offset = state.clock.skew, state.clock.offset
    delays = np.empty(data.num_paths)

    for i in range(data.num_paths):
        w = _weights(resp, state, i)
        mu1, mu2 = state.forward[i].means, state.reverse[i].means
        sym = (records.t2[i] - offset) / skew - records.t1[i]
        asym = sym - state.asymmetries[i]
        rev = records.t4[i] + (offset - records.t3[i]) / skew

        total = ((w.c1 * (asym[:, None] - mu1) + w.c0 * (sym[:, None] - mu1)) @ w.inv_var1).sum()
        total += ((w.r * (rev[:, None] - mu2)) @ w.inv_var2).sum()
        mass = ((w.c1 + w.c0) @ w.inv_var1).sum() + (w.r @ w.inv_var2).sum()
        delays[i] = total / mass

    return delays


def update_asymmetries(resp: Responsibilities, state: SageState, data: WindowData) -> AsymmetryUpdate:
    records = data.records
    skew, offset = state.clock.skew, state.clock.offset
    asymmetries = state.asymmetries.copy()
    frozen = []

    for i in range(data.num_paths):
        w = _weights(resp, state, i)
        excess = (records.t2[i] - offset) / skew - state.det_delays[i] - records.t1[i]
        mass = (w.c1 @ w.inv_var1).sum()

        if mass < STARVED_MASS:
            frozen.append(True)
            continue

        asymmetries[i] = ((w.c1 * (excess[:, None] - state.forward[i].means)) @ w.inv_var1).sum() / mass
        frozen.append(False)

    return AsymmetryUpdate(asymmetries, tuple(frozen))


def update_offset(resp: Responsibilities, state: SageState, data: WindowData) -> float:
    records = data.records
    skew = state.clock.skew
    total, mass = 0.0, 0.0

    for i in range(data.num_paths):
        w = _weights(resp, state, i)
        mu1, mu2 = state.forward[i].means, state.reverse[i].means
        sym = records.t2[i] / skew - records.t1[i] - state.det_delays[i]
        asym = sym - state.asymmetries[i]
        rev = records.t4[i] - state.det_delays[i] - records.t3[i] / skew

        total += ((w.c1 * (asym[:, None] - mu1) + w.c0 * (sym[:, None] - mu1)) @ w.inv_var1).sum()
        total -= ((w.r * (rev[:, None] - mu2)) @ w.inv_var2).sum()
        mass += ((w.c1 + w.c0) @ w.inv_var1).sum() + (w.r @ w.inv_var2).sum()

    return float(skew * total / mass)


def skew_coefficients(resp: Responsibilities, state: SageState, data: WindowData) -> tuple[float, float, float]:
    """
    Coefficients (a, b, c) of the skew stationarity condition a * phi**2 + b * phi - c = 0
    """
    records = data.records
    offset = state.clock.offset
    b, c = 0.0, 0.0

    for i in range(data.num_paths):
        w = _weights(resp, state, i)
        mu1, mu2 = state.forward[i].means, state.reverse[i].means
        fwd_gap = records.t2[i] - offset
        rev_gap = offset - records.t3[i]
        sym_shift = state.det_delays[i] + records.t1[i]
        asym_shift = sym_shift + state.asymmetries[i]
        rev_shift = records.t4[i] - state.det_delays[i]

        c += (((w.c1 + w.c0) * (fwd_gap ** 2)[:, None]) @ w.inv_var1).sum()
        c += ((w.r * (rev_gap ** 2)[:, None]) @ w.inv_var2).sum()
        b += ((w.c1 * fwd_gap[:, None] * (asym_shift[:, None] + mu1)) @ w.inv_var1).sum()
        b += ((w.c0 * fwd_gap[:, None] * (sym_shift[:, None] + mu1)) @ w.inv_var1).sum()
        b -= ((w.r * rev_gap[:, None] * (rev_shift[:, None] - mu2)) @ w.inv_var2).sum()

    return float(2 * data.num_paths * data.num_exchanges), float(b), float(c)


def skew_root(a: float, b: float, c: float, convention: SkewRootConvention = 'derived') -> float:
    """
    Positive root of the skew quadratic. 'derived' solves a * phi**2 + b * phi - c = 0, the stationarity condition
    of the expected complete-data log-likelihood; 'printed' evaluates (sqrt(b**2 - 4ac) - b) / 2a.
    Returns nan when the requested root does not exist.
    """
    if convention == 'printed':
        discriminant = b * b - 4 * a * c
        return (math.sqrt(discriminant) - b) / (2 * a) if discriminant >= 0 else math.nan

    discriminant = b * b + 4 * a * c
    if discriminant < 0:
        return math.nan
    root = math.sqrt(discriminant)
    return 2 * c / (b + root) if b > 0 else (root - b) / (2 * a)


def skew_objective(skew: float, a: float, b: float, c: float) -> float:
    """
    Skew-dependent part of the expected complete-data log-likelihood
    """
    return -c / (2 * skew * skew) + b / skew - a * math.log(skew)


def update_skew(
        resp: Responsibilities,
        state: SageState,
        data: WindowData,
        convention: SkewRootConvention = 'derived'
) -> SkewUpdate:
    a, b, c = skew_coefficients(resp, state, data)
    skew = skew_root(a, b, c, convention)

    if math.isfinite(skew) and skew > 0:
        return SkewUpdate(skew, False)

    current = state.clock.skew
    logger.info(f'Skew root unavailable (a={a}, b={b}, c={c}), maximizing numerically around {current}')
    result = minimize_scalar(
        lambda value: -skew_objective(value, a, b, c),
        bounds=(current / 2, current * 2),
        method='bounded',
        options={'xatol': 1e-13 * current}
    )
    best = float(result.x)
    if skew_objective(best, a, b, c) < skew_objective(current, a, b, c):
        best = current
    return SkewUpdate(best, True)


def q_function(
        state_new: SageState,
        state_old: SageState,
        data: WindowData,
        resp: Responsibilities | None = None
) -> float:
    """
    Expected complete-data log-likelihood of state_new under the responsibilities of state_old
    """
    resp = e_step(state_old, data) if resp is None else resp
    value = -2 * data.num_paths * data.num_exchanges * math.log(state_new.clock.skew)

    for i in range(data.num_paths):
        res = _residuals(state_new, data, i)
        fwd, rev = state_new.forward[i], state_new.reverse[i]
        chi1, chi0, a_tilde = resp.chi1[i], resp.chi0[i], resp.a_tilde[i]
        c1, c0 = chi1.sum(axis=2), chi0.sum(axis=2)
        r = (chi1 + chi0).sum(axis=1)
        at, bt = a_tilde.sum(axis=2), a_tilde.sum(axis=1)

        value += xlogy(chi1.sum(), state_new.pi[i]) + xlogy(chi0.sum(), 1 - state_new.pi[i])
        value += xlogy((c1 + c0).sum(axis=0) + at.sum(axis=0), fwd.weights).sum()
        value += xlogy(r.sum(axis=0) + bt.sum(axis=0), rev.weights).sum()

        value += (c1 * norm.logpdf(res.asym[:, None], fwd.means, fwd.stds)).sum()
        value += (c0 * norm.logpdf(res.sym[:, None], fwd.means, fwd.stds)).sum()
        value += (r * norm.logpdf(res.rev[:, None], rev.means, rev.stds)).sum()
        value += (at * norm.logpdf(data.residuals.fwd[i][:, None], fwd.means, fwd.stds)).sum()
        value += (bt * norm.logpdf(data.residuals.rev[i][:, None], rev.means, rev.stds)).sum()

    return float(value)


def classify_paths(state: SageState) -> tuple[bool, ...]:
    return tuple(bool(pi >= 0.5) for pi in state.pi)


def _with_components(
        state: SageState,
        weights: tuple[tuple[FloatArray, ...], tuple[FloatArray, ...]] | None = None,
        means: tuple[tuple[FloatArray, ...], tuple[FloatArray, ...]] | None = None,
        variances: tuple[tuple[FloatArray, ...], tuple[FloatArray, ...]] | None = None
) -> SageState:
    mixtures = []
    for side, current in enumerate((state.forward, state.reverse)):
        mixtures.append(tuple(
            GmmParams(
                weights=current[i].weights if weights is None else weights[side][i],
                means=current[i].means if means is None else means[side][i],
                stds=current[i].stds if variances is None else np.sqrt(variances[side][i])
            )
            for i in range(state.num_paths)
        ))
    return replace(state, forward=mixtures[0], reverse=mixtures[1])


def _converged(previous: float, current: float, abs_tol: float, rel_tol: float) -> bool:
    change = abs(current - previous)
    return change < abs_tol and change < rel_tol * abs(current)


def run(
        data: WindowData,
        init_state: SageState,
        abs_tol: float = 1e-8,
        rel_tol: float = 1e-10,
        max_iter: int = 200,
        skew_convention: SkewRootConvention = 'derived',
        decrease_slack: float = 1e-7
) -> SageResult:
    """
    Runs full SAGE cycles. Each cycle updates the parameter blocks in the order mixing weights, means, variances,
    path delays, asymmetries, offset, skew, and refreshes the responsibilities after every block.

    :param data: Current window records and previous-window residuals
    :param init_state: Starting point, usually from initialization.initialize
    :param abs_tol: Bound on the absolute log-likelihood change of a converged cycle
    :param rel_tol: Bound on the relative log-likelihood change of a converged cycle, both must hold
    :param max_iter: Maximum number of cycles
    :param skew_convention: Root of the skew quadratic to use, see skew_root
    :param decrease_slack: Absolute log-likelihood loss tolerated before raising LikelihoodDecreaseError
    :return: Final state, per-cycle trace, convergence flag and number of cycles
    """
    if init_state.num_paths != data.num_paths:
        raise ValueError(f'State has {init_state.num_paths} paths, data {data.num_paths}')

    state = init_state
    resp, log_likelihood = _expectation(state, data)
    trace = [TraceEntry(0, log_likelihood, state.clock.skew, state.clock.offset, tuple(state.pi.tolist()))]

    for iteration in range(1, max_iter + 1):
        previous = log_likelihood

        mixing = update_mixing(resp)
        state = _with_components(replace(state, pi=mixing.pi), weights=(mixing.forward_weights, mixing.reverse_weights))
        resp = e_step(state, data)

        means = update_means(resp, state, data)
        state = _with_components(state, means=(means.forward, means.reverse))
        resp = e_step(state, data)

        variances = update_variances(resp, state, data)
        state = _with_components(state, variances=(variances.forward, variances.reverse))
        resp = e_step(state, data)

        if means.frozen or variances.frozen:
            logger.warning(f'Starved mixture components kept at previous values in cycle {iteration}')

        state = replace(state, det_delays=update_path_delays(resp, state, data))
        resp = e_step(state, data)

        asymmetries = update_asymmetries(resp, state, data)
        if any(asymmetries.frozen):
            logger.warning(f'Asymmetry of paths {[i for i, f in enumerate(asymmetries.frozen) if f]} kept in cycle '
                           f'{iteration}, no responsibility on the asymmetric branch')
        state = replace(state, asymmetries=asymmetries.asymmetries)
        resp = e_step(state, data)

        offset = update_offset(resp, state, data)
        state = replace(state, clock=ClockParams(skew=state.clock.skew, offset=offset))
        resp = e_step(state, data)

        skew = update_skew(resp, state, data, skew_convention)
        state = replace(state, clock=ClockParams(skew=skew.skew, offset=state.clock.offset))
        resp, log_likelihood = _expectation(state, data)

        logger.debug(f'SAGE cycle {iteration}: log-likelihood {log_likelihood}')
        trace.append(TraceEntry(iteration, log_likelihood, state.clock.skew, state.clock.offset,
                                tuple(state.pi.tolist())))

        if _likelihood_decreased(previous, log_likelihood, decrease_slack):
            raise LikelihoodDecreaseError(
                f'Log-likelihood decreased from {previous} to {log_likelihood} in cycle {iteration}'
            )

        if _converged(previous, log_likelihood, abs_tol, rel_tol):
            logger.info(f'SAGE converged after {iteration} cycles, log-likelihood {log_likelihood}')
            return SageResult(state, tuple(trace), True, iteration)

    logger.info(f'SAGE stopped after {max_iter} cycles without converging, log-likelihood {log_likelihood}')
    return SageResult(state, tuple(trace), False, max_iter)


def write_trace_csv(trace: tuple[TraceEntry, ...], path: str | PathLike):
    """
    Writes one row per cycle: iteration, log-likelihood, skew, offset and every path's asymmetry probability
    """
    num_paths = len(trace[0].pi) if trace else 0
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(['iteration', 'log_likelihood', 'skew', 'offset'] + [f'pi_{i}' for i in range(num_paths)])
        for entry in trace:
            writer.writerow([entry.iteration, repr(entry.log_likelihood), repr(entry.skew), repr(entry.offset)]
                            + [repr(value) for value in entry.pi])
