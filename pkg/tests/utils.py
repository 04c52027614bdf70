import math
import numpy as np
from typing import Callable
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp
from scipy.stats import norm
from ptp_csoe.clock_model import PeriodicSchedule, timestamps_from_delays
from ptp_csoe.genie import GenieInputs
from ptp_csoe.gmm import GmmParams
from ptp_csoe.sage import SageState
from ptp_csoe.types import Scenario, WindowData, PrevWindowResiduals


def sample_gmm(params: GmmParams, size: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    components = rng.choice(params.num_components, size=size, p=params.weights)
    return rng.normal(params.means[components], params.stds[components])


def window_from_delays(
        scenario: Scenario,
        w1: np.ndarray,
        w2: np.ndarray,
        prev_fwd: np.ndarray,
        prev_rev: np.ndarray,
        schedule: PeriodicSchedule = PeriodicSchedule()
) -> WindowData:
    t1, t4 = schedule(scenario.num_paths, w1.shape[1])
    records = timestamps_from_delays(scenario, w1, w2, t1, t4)
    return WindowData(records=records, residuals=PrevWindowResiduals(fwd=prev_fwd, rev=prev_rev))


def coordinate_argmax(objective: Callable[[float], float], low: float, high: float) -> float:
    result = minimize_scalar(lambda value: -objective(value), bounds=(low, high), method='bounded',
                             options={'xatol': 1e-11})
    return float(result.x)


def naive_log_likelihood(state: SageState, data: WindowData) -> float:
    """
    Incomplete log-likelihood summed term by term with plain densities
    """
    records = data.records
    skew, offset = state.clock.skew, state.clock.offset

    def density(params: GmmParams, x: float) -> float:
        return sum(weight * norm.pdf(x, mean, std) for weight, mean, std in zip(params.weights, params.means,
                                                                                params.stds))

    total = 0.0
    for i in range(data.num_paths):
        fwd, rev, pi = state.forward[i], state.reverse[i], float(state.pi[i])
        for j in range(data.num_exchanges):
            sym = (records.t2[i, j] - offset) / skew - state.det_delays[i] - records.t1[i, j]
            asym = sym - state.asymmetries[i]
            back = records.t4[i, j] - state.det_delays[i] + (offset - records.t3[i, j]) / skew
            total += math.log((pi * density(fwd, asym) + (1 - pi) * density(fwd, sym)) * density(rev, back))
        for j in range(data.num_prev):
            total += math.log(density(fwd, data.residuals.fwd[i, j]))
            total += math.log(density(rev, data.residuals.rev[i, j]))

    return total - 2 * data.num_paths * data.num_exchanges * math.log(skew)


def naive_gamma(params: tuple[float, float, list[float], list[float]], inputs: GenieInputs) -> float:
    skew, offset, delays, asymmetries = params
    records = inputs.records
    product = 1.0

    for i, (fwd_pdf, rev_pdf) in enumerate(inputs.delay_pdfs):
        asymmetry = asymmetries[i] if inputs.known_eta[i] else 0.0
        for j in range(records.num_exchanges):
            fwd = (records.t2[i, j] - offset) / skew - records.t1[i, j] - delays[i] - asymmetry
            rev = records.t4[i, j] - delays[i] - (records.t3[i, j] - offset) / skew
            product *= float(np.exp(fwd_pdf.logpdf(fwd))) * float(np.exp(rev_pdf.logpdf(rev)))

    return math.log(product)


def brute_force_genie(inputs: GenieInputs) -> tuple[float, float, float]:
    """
    Full Riemann sums over every (skew, offset, delays, asymmetries) cell of the grid, without pruning or
    support clipping

    :return: Offset, skew and the interior mass fraction
    """
    records = inputs.records
    grid = inputs.grid
    skews, linear = grid.phi_values, grid.linear_values
    exponent = inputs.skew_exponent
    interior = np.zeros(linear.size, dtype=bool)
    interior[1:-1] = True

    log_mass = np.full((skews.size, linear.size), -np.inf)
    log_inner = np.full((skews.size, linear.size), -np.inf)

    for k, skew in enumerate(skews):
        for m, offset in enumerate(linear):
            tensors, masked = [], []
            for i, (fwd_pdf, rev_pdf) in enumerate(inputs.delay_pdfs):
                x = (records.t2[i] - offset) / skew - records.t1[i]
                z = records.t4[i] - (records.t3[i] - offset) / skew
                rev = rev_pdf.logpdf(z[None, :] - linear[:, None]).sum(axis=1)
                if inputs.known_eta[i]:
                    shifts = linear[:, None, None] + linear[None, :, None]
                    values = fwd_pdf.logpdf(x[None, None, :] - shifts).sum(axis=2) + rev[:, None]
                    mask = interior[:, None] & interior[None, :]
                else:
                    values = fwd_pdf.logpdf(x[None, :] - linear[:, None]).sum(axis=1) + rev
                    mask = interior
                tensors.append(values)
                masked.append(np.where(mask, values, -np.inf))

            joint, joint_inner = tensors[0], masked[0]
            for values, inner in zip(tensors[1:], masked[1:]):
                joint = np.add.outer(joint, values)
                joint_inner = np.add.outer(joint_inner, inner)

            weight = -exponent * math.log(skew)
            log_mass[k, m] = logsumexp(joint) + weight
            if 0 < k < skews.size - 1 and interior[m]:
                log_inner[k, m] = logsumexp(joint_inner) + weight

    shift = log_mass.max()
    weights = np.exp(log_mass - shift)
    total = weights.sum()
    offset = float((weights * linear[None, :]).sum() / total)
    skew = float((weights * skews[:, None]).sum() / total)
    return offset, skew, float(np.exp(log_inner - shift).sum() / total)
