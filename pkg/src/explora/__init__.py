"""Autonomous 2D exploration with RRT frontiers and polyline paths."""

from .config import Scenario, ScenarioConfig, load_config, parse_config
from .controller import MissionReport, Outcome, run_mission

__all__ = ["MissionReport", "Outcome", "Scenario", "ScenarioConfig", "load_config", "parse_config", "run_mission"]
__version__ = "0.1.0"
