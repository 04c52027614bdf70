from typing import Literal, get_args, TypedDict, Type, Any
from ptp_csoe.types import ScenarioInfo, TrafficInfo, TrafficModel

MICROSECOND = 1e-6


def _in_literal(value: Any, expected_type: Literal) -> bool:
    values = get_args(expected_type)
    return value in values


def _has_keys(value: Any, typed_dict: Type[TypedDict]) -> bool:
    required_keys = typed_dict.__required_keys__
    allowed_keys = required_keys | typed_dict.__optional_keys__

    try:
        value_keys = set(value.keys())
    except AttributeError:
        return False

    return required_keys <= value_keys <= allowed_keys


def _is_traffic_info(value: Any) -> bool:
    return _has_keys(value, TrafficInfo) and _in_literal(value['model'], TrafficModel)


def _is_scenario_info(value: Any) -> bool:
    if not _has_keys(value, ScenarioInfo):
        return False

    if not _is_traffic_info(value['traffic']):
        return False

    prev_traffic = value.get('prev_traffic')
    return prev_traffic is None or _is_traffic_info(prev_traffic)


def to_seconds(value_us: Any) -> Any:
    """
    Converts microseconds, as used in configuration files, into seconds, as used everywhere else
    """
    if isinstance(value_us, (list, tuple)):
        return [float(item) * MICROSECOND for item in value_us]
    return float(value_us) * MICROSECOND


def to_microseconds(value: float) -> float:
    return value / MICROSECOND
