from optimization.qp import QuadraticProgram, QpBuilder, VariableIndex, ObjectiveTerm, dump
from optimization.solver import (
    QpSolution, solve, variable_slice, duality_gap, require_optimal, clear_cache,
    OPTIMAL, INFEASIBLE, DUAL_INFEASIBLE, ITERATION_LIMIT,
)
