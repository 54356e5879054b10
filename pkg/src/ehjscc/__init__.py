"""Distortion-minimising coding and energy management for energy-harvesting sensors."""

from .config import ConfigError, System, SystemConfig
from .energy import Battery, ConsumptionParams, EnergyModel, HarvestModel
from .mdp import MdpModel, MdpSolution, build_model, rvia_solve, steady_state_cost
from .rd_core import LinkModel, RdSolution, SourceFit

__version__ = "0.1.0"

__all__ = [
    "Battery", "ConfigError", "ConsumptionParams", "EnergyModel", "HarvestModel",
    "LinkModel", "MdpModel", "MdpSolution", "RdSolution", "SourceFit", "System",
    "SystemConfig", "build_model", "rvia_solve", "steady_state_cost",
]
