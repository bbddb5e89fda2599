"""Traffic-driven spectrum allocation over frequency-reuse patterns.

Optimizers for the conservative (decoupled M/M/1) and refined (lumped
coupled-queue) delay models, delay bounds, a uniformized queue simulator and
an alternating power-control loop.
"""

from .baselines import full_reuse, orthogonal_load, solve_orthogonal, throughput_margin
from .bounds import (BoundsReport, bounds_report, first_degree_bounds, second_degree_lower,
                     second_degree_upper)
from .conservative import (Allocation, DelayReport, Trace, algorithm1, conservative_delay,
                           conservative_rates, find_feasible, p1_gradient, p1_objective, solve_p1,
                           support_patterns)
from .network import (ConfigError, EfficiencyTable, Scenario, build_scenario, build_table,
                      interference_psd, load_scenario, shannon_rate, spectral_efficiency)
from .powerctl import PowerTrajectory, alternate, update_efficiencies
from .queuesim import SimResult, exact_small_delay, simulate, simulate_coupled, utilization
from .refined import LumpedChain, lumped_generator, refined_delay, refined_rates, steady_state
from .refined_opt import P2Eval, P2Trace, p2_objective, p2_objective_and_gradient, solve_p2
from .simplex import InfeasibleError, SolverError, SolverOptions

__version__ = "0.1.0"

__all__ = [
    "Allocation", "BoundsReport", "ConfigError", "DelayReport", "EfficiencyTable",
    "InfeasibleError", "LumpedChain", "P2Eval", "P2Trace", "PowerTrajectory", "Scenario",
    "SimResult", "SolverError", "SolverOptions", "Trace", "algorithm1", "alternate",
    "bounds_report", "build_scenario", "build_table", "conservative_delay", "conservative_rates",
    "exact_small_delay", "find_feasible", "first_degree_bounds", "full_reuse", "interference_psd",
    "load_scenario", "lumped_generator", "orthogonal_load", "p1_gradient", "p1_objective",
    "p2_objective", "p2_objective_and_gradient", "refined_delay", "refined_rates",
    "second_degree_lower", "second_degree_upper", "shannon_rate", "simulate", "simulate_coupled",
    "solve_orthogonal", "solve_p1", "solve_p2", "spectral_efficiency", "steady_state",
    "support_patterns", "throughput_margin", "update_efficiencies", "utilization",
]
