import copy
import yaml
from os import PathLike
from typing import Any, cast
from ptp_csoe.clock_model import PeriodicSchedule
from ptp_csoe.genie import IntegrationGrid
from ptp_csoe.initialization import InitConfig
from ptp_csoe.queue_sim import SwitchCascadeConfig, CascadeDelaySource, BYTE
from ptp_csoe.types import (Scenario, PathConfig, ClockParams, ScenarioInfo, TrafficInfo, GridInfo, ExperimentInfo,
                            ExperimentSpec, SweepAxis, PrevNoiseInfo, Estimator)
from ptp_csoe.utils import _has_keys, _in_literal, _is_scenario_info, _is_traffic_info, to_seconds


def load_config(path: str | PathLike) -> ExperimentInfo | ScenarioInfo:
    """
    Reads a YAML document holding either a whole experiment or a single scenario

    :param path: Path of the YAML file
    :return: Validated mapping, ExperimentInfo when it has a 'scenario' key and ScenarioInfo otherwise
    """
    with open(path) as file:
        document = yaml.safe_load(file)

    if not isinstance(document, dict):
        raise TypeError(f'Configuration must be a mapping, got {type(document).__name__}')

    if 'scenario' in document:
        return validate_experiment_info(document)
    return validate_scenario_info(document)


def validate_scenario_info(value: Any) -> ScenarioInfo:
    if not _is_scenario_info(value):
        raise TypeError(f'Scenario must be represented as ScenarioInfo with keys '
                        f'{sorted(ScenarioInfo.__required_keys__)}. You provided value: {value}')

    info = cast(ScenarioInfo, value)
    num_paths = info['N']
    for key in ('tau_us', 'd_us'):
        entry = info[key]
        if isinstance(entry, list) and len(entry) != num_paths:
            raise ValueError(f'{key} lists {len(entry)} values for {num_paths} paths')
    load = info['traffic']['load']
    if isinstance(load, list) and len(load) != num_paths:
        raise ValueError(f'Traffic load lists {len(load)} values for {num_paths} paths')

    return info


def validate_experiment_info(value: Any) -> ExperimentInfo:
    if not _has_keys(value, ExperimentInfo):
        raise TypeError(f'Experiment must be represented as ExperimentInfo with keys '
                        f'{sorted(ExperimentInfo.__required_keys__)}. You provided value: {value}')

    info = cast(ExperimentInfo, value)
    validate_scenario_info(info['scenario'])

    for estimator in info['estimators']:
        if not _in_literal(estimator, Estimator):
            raise ValueError(f'Unknown estimator {estimator!r}')

    sweep = info.get('sweep')
    if sweep is not None and not _in_literal(sweep.get('axis'), SweepAxis):
        raise ValueError(f'Unknown sweep axis {sweep.get("axis")!r}')

    return info


def _per_path(value: float | list[float], num_paths: int) -> list[float]:
    return [float(item) for item in value] if isinstance(value, list) else [float(value)] * num_paths


def scenario_from_info(info: ScenarioInfo) -> Scenario:
    """
    Builds the ground truth of a scenario. Paths with a non-zero asymmetry are asymmetric
    """
    num_paths = info['N']
    delays = to_seconds(_per_path(info['d_us'], num_paths))
    asymmetries = to_seconds(_per_path(info['tau_us'], num_paths))

    return Scenario(
        paths=tuple(
            PathConfig(det_delay=delay, asymmetry=asymmetry, is_asymmetric=asymmetry != 0)
            for delay, asymmetry in zip(delays, asymmetries)
        ),
        clock=ClockParams(skew=float(info['phi']), offset=to_seconds(info['delta_us'])),
        exchanges_per_path=info['P'],
        prev_window_exchanges=info.get('P_t', info['P']),
        d_tau=to_seconds(info['d_tau_us'])
    )


def cascade_from_info(traffic: TrafficInfo, load: float) -> SwitchCascadeConfig:
    if not _is_traffic_info(traffic):
        raise TypeError(f'Traffic must be represented as TrafficInfo. You provided value: {traffic}')

    options = {}
    if 'num_switches' in traffic:
        options['num_switches'] = traffic['num_switches']
    if 'link_rate_bps' in traffic:
        options['link_rate'] = float(traffic['link_rate_bps'])
    if 'sync_packet_bytes' in traffic:
        options['sync_packet_bits'] = traffic['sync_packet_bytes'] * BYTE
    if 'size_mix' in traffic:
        options['background_size_mix'] = tuple((size * BYTE, probability) for size, probability in traffic['size_mix'])

    return SwitchCascadeConfig(background_load=float(load), **options)


def delay_source_from_info(traffic: TrafficInfo, num_paths: int) -> CascadeDelaySource:
    """
    One cascade per path, shared by both directions of the path
    """
    cascades = tuple(cascade_from_info(traffic, load) for load in _per_path(traffic['load'], num_paths))
    return CascadeDelaySource(forward=cascades, reverse=cascades)


def schedule_from_info(info: ScenarioInfo) -> PeriodicSchedule:
    schedule = info.get('schedule')
    if schedule is None:
        return PeriodicSchedule()
    return PeriodicSchedule(spacing=to_seconds(schedule['spacing_us']), turnaround=to_seconds(schedule['turnaround_us']))


def grid_from_info(info: GridInfo | None, default: IntegrationGrid = IntegrationGrid()) -> IntegrationGrid:
    if info is None:
        return default
    if not _has_keys(info, GridInfo):
        raise TypeError(f'Grid must be represented as GridInfo. You provided value: {info}')

    return IntegrationGrid(
        phi_range=tuple(info['phi_range']),
        phi_step=float(info['phi_step']),
        linear_range=tuple(to_seconds(info['linear_range_us'])),
        linear_step=to_seconds(info['linear_step_us']),
        prune_nats=float(info.get('prune_nats', default.prune_nats)),
        chunk=default.chunk
    )


def init_config_from_info(info: ScenarioInfo) -> InitConfig:
    defaults = InitConfig()
    return InitConfig(
        components=info.get('components', defaults.components),
        d_tau=to_seconds(info['d_tau_us']),
        kappa=float(info.get('kappa', defaults.kappa)),
        grid=grid_from_info(info.get('init_grid'), defaults.grid)
    )


def _label(axis: SweepAxis, value: Any) -> str:
    if isinstance(value, (list, tuple)):
        value = '_'.join(str(item) for item in value)
    return f'{axis}={value}'


def apply_sweep_value(info: ScenarioInfo, axis: SweepAxis, value: Any) -> ScenarioInfo:
    """
    Copy of a scenario with one sweep axis set to value
    """
    info = cast(ScenarioInfo, copy.deepcopy(info))

    if axis == 'P':
        info['P'] = int(value)
    elif axis == 'load':
        info['traffic']['load'] = value
    elif axis == 'clock_cases':
        info['phi'], info['delta_us'] = float(value[0]), float(value[1])
    elif axis == 'components':
        info['components'] = int(value)
    elif axis == 'prev_load':
        prev_traffic = copy.deepcopy(info.get('prev_traffic', info['traffic']))
        prev_traffic['load'] = value
        info['prev_traffic'] = prev_traffic
    elif axis == 'prev_noise':
        info['prev_noise'] = PrevNoiseInfo(linear_std_us=float(value[0]), skew_std=float(value[1]))
    else:
        raise ValueError(f'Unknown sweep axis {axis!r}')

    return info


def experiment_spec_from_info(info: ExperimentInfo) -> ExperimentSpec:
    """
    Expands an experiment into its configuration points, one per sweep value
    """
    info = validate_experiment_info(info)
    sweep = info.get('sweep')

    if sweep is None:
        points = (('base', info['scenario']),)
    else:
        axis = sweep['axis']
        points = tuple(
            (_label(axis, value), validate_scenario_info(apply_sweep_value(info['scenario'], axis, value)))
            for value in sweep['values']
        )

    return ExperimentSpec(
        name=info['name'],
        points=points,
        trials=info['trials'],
        seed=info['seed'],
        estimators=tuple(info['estimators']),
        bootstrap_resamples=info.get('bootstrap_resamples', 1000)
    )
