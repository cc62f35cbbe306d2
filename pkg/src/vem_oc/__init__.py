"""Variation-evolving solver for constrained optimal control problems."""

from .errors import (ActiveSetError, AssemblyError, ControllabilityError, EvaluationError,
                     InfeasibleInitError, InvalidGridError, MultiplierSolveError,
                     ProblemDefinitionError, PropagationError, StiffnessError, VemError)
from .evolution import Diagnostics, SolveResult, evolution_rhs, solve, stacked_size
from .feasible_init import solve_fssop, straight_line_init
from .gradients import SolverConfig, compute_pu, compute_pu_pc, recover_costate, solve_pi
from .grid import TimeGrid, Trajectory, build_grid
from .problem import OcpProblem, SampleBox, validate_problem
from .problems import BUILTIN, example1, example2
from .transition import build_transition_table, propagate

__all__ = [
    "ActiveSetError", "AssemblyError", "ControllabilityError", "EvaluationError",
    "InfeasibleInitError", "InvalidGridError", "MultiplierSolveError",
    "ProblemDefinitionError", "PropagationError", "StiffnessError", "VemError",
    "Diagnostics", "SolveResult", "evolution_rhs", "solve", "stacked_size",
    "solve_fssop", "straight_line_init",
    "SolverConfig", "compute_pu", "compute_pu_pc", "recover_costate", "solve_pi",
    "TimeGrid", "Trajectory", "build_grid",
    "OcpProblem", "SampleBox", "validate_problem",
    "BUILTIN", "example1", "example2",
    "build_transition_table", "propagate",
]
