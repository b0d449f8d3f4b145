"""Deterministic virtual-time network simulator."""

from .models import (
    BurstModel,
    ClockModel,
    DeliverySchedule,
    Jitter,
    LinkModel,
    deliveries,
    substream,
)
from .replication import (
    packaged_scenario,
    packaged_scenario_names,
    replication_scenario,
)
from .scenario import PeerSpec, Scenario, load_scenario, scenario_from_dict
from .sim import RunResult, StreamAccount, run

__all__ = [
    "BurstModel",
    "ClockModel",
    "DeliverySchedule",
    "Jitter",
    "LinkModel",
    "PeerSpec",
    "RunResult",
    "Scenario",
    "StreamAccount",
    "deliveries",
    "load_scenario",
    "packaged_scenario",
    "packaged_scenario_names",
    "replication_scenario",
    "run",
    "scenario_from_dict",
    "substream",
]
