"""Scenario harness: seeded devices, synthetic links and end-to-end runs."""
from edgeledger.sim.network import LinkModel, LoopbackNetwork, PathModel, ProfileMeter, VirtualNetwork
from edgeledger.sim.runner import (
    Comparison,
    PurgeError,
    ScenarioReport,
    ScenarioRunner,
    ServerSummary,
    compare_to_expectation,
    run_scenario,
)
from edgeledger.sim.scenario import (
    Expectation,
    LinkProfile,
    ResourceProfile,
    ScenarioDevice,
    ScenarioError,
    ScenarioSpec,
    bundled_scenario,
    load_expectation,
    load_scenario,
    parse_expectation,
    parse_scenario,
)

__all__ = [
    "Comparison",
    "Expectation",
    "LinkModel",
    "LinkProfile",
    "LoopbackNetwork",
    "PathModel",
    "ProfileMeter",
    "PurgeError",
    "ResourceProfile",
    "ScenarioDevice",
    "ScenarioError",
    "ScenarioReport",
    "ScenarioRunner",
    "ScenarioSpec",
    "ServerSummary",
    "VirtualNetwork",
    "bundled_scenario",
    "compare_to_expectation",
    "load_expectation",
    "load_scenario",
    "parse_expectation",
    "parse_scenario",
    "run_scenario",
]
