"""Discrete-event simulator for hierarchical intrusion detection in wireless sensor networks."""

from .metrics import MetricsReport, collect, compare
from .scenario import ConfigError, Scenario, load_scenario, scenario_from_dict
from .simulation import InvariantViolation, Simulation

__all__ = [
    "ConfigError",
    "InvariantViolation",
    "MetricsReport",
    "Scenario",
    "Simulation",
    "collect",
    "compare",
    "load_scenario",
    "scenario_from_dict",
]
__version__ = "0.1.0"
