"""Cell-free massive MIMO energy-efficiency laboratory.

Closed-form spectral/energy-efficiency evaluation with a Monte Carlo
oracle, three-coefficient resource-allocation heuristics, an episodic RL
environment, and a self-contained PPO trainer.
"""

from .config import SystemConfig
from .netgen import Scenario, generate_scenario
from .alloc import Action, realize
from .perf import AllocationDecision, PerfReport, evaluate

__all__ = [
    "SystemConfig", "Scenario", "generate_scenario",
    "Action", "realize", "AllocationDecision", "PerfReport", "evaluate",
]

__version__ = "0.1.0"
