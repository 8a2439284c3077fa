"""Coding-resource minimization for network-coded multicast.

A genetic algorithm picks which merging nodes must code so that every
receiver still reaches the target rate; a round-based simulator measures
what that choice buys in peer-to-peer content distribution.
"""

from .coding import (CodingAssignment, FitnessCoefficients, FitnessReport, brute_force_min_coding,
                     estimate_fitness, evaluate_rates, symbolic_rates)
from .errors import NcgaError
from .ga import GaParams, RunResult, run_ga
from .netgraph import Network, butterfly, build_network, generate_random_dag, max_flow, merging_nodes
from .sim import SimConfig, SimMetrics, compare_strategies, run_simulation, select_coding_nodes

__all__ = [
    "CodingAssignment", "FitnessCoefficients", "FitnessReport", "GaParams", "NcgaError", "Network",
    "RunResult", "SimConfig", "SimMetrics", "brute_force_min_coding", "build_network", "butterfly",
    "compare_strategies", "estimate_fitness", "evaluate_rates", "generate_random_dag", "max_flow",
    "merging_nodes", "run_ga", "run_simulation", "select_coding_nodes", "symbolic_rates",
]
__version__ = "0.1.0"
