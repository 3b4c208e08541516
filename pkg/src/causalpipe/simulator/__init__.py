"""Synthetic agent, task catalogs and the end-to-end paradox runs."""

from .agent import DegradedOracle, SyntheticAgentConfig, make_agent
from .domain import AIRLINE, RETAIL, SyntheticTask, generate_tasks, get_domain, gold_oracle
from .paradox import KAPPA_GRID, PARADOX_CONFIGURATIONS, ParadoxReport, SimulationConfig, hazard_onset, kappa_grid, reproduce_paradox

__all__ = ["AIRLINE", "KAPPA_GRID", "PARADOX_CONFIGURATIONS", "RETAIL", "DegradedOracle", "ParadoxReport", "SimulationConfig", "SyntheticAgentConfig",
           "SyntheticTask", "generate_tasks", "get_domain", "gold_oracle", "hazard_onset", "kappa_grid",
           "make_agent", "reproduce_paradox"]
