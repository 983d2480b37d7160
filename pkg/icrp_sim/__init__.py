"""Discrete-event simulator of ICRP routing over CSMA-Aloha in underwater acoustic networks."""

from .config import load_scenario, parse_scenario
from .network import Simulator, run
from .scenario import Scenario, build_ring_scenario

__all__ = ["Scenario", "Simulator", "build_ring_scenario", "load_scenario", "parse_scenario", "run"]
