"""Overlapping-coalition delivery planning: scenarios, routing, a potential
game over payload commitments, decision policies, and an event-driven harness.
"""

from .scenario import (Agent, Depot, GeneratorConfig, Scenario, ScenarioError,
                       Task, generate_scenario, load_scenario, save_scenario)
from .routing import Route, cheapest_insertion, trace_route
from .cost import CostBreakdown, total_cost
from .game import (CoalitionStructure, EngineConfig, SolveResult,
                   full_evaluate, is_nash_stable, solve)
from .policy import (HeuristicPolicy, LearnedPolicy, RandomPolicy, StateView,
                     make_policy)
from .harness import (BenchReport, SimulationTimeline, monte_carlo, simulate,
                      verify)

__version__ = "0.1.0"

__all__ = [
    "Agent", "Depot", "GeneratorConfig", "Scenario", "ScenarioError", "Task",
    "generate_scenario", "load_scenario", "save_scenario",
    "Route", "cheapest_insertion", "trace_route",
    "CostBreakdown", "total_cost",
    "CoalitionStructure", "EngineConfig", "SolveResult",
    "full_evaluate", "is_nash_stable", "solve",
    "HeuristicPolicy", "LearnedPolicy", "RandomPolicy", "StateView",
    "make_policy",
    "BenchReport", "SimulationTimeline", "monte_carlo", "simulate", "verify",
    "__version__",
]
