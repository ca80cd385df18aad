from .model import (BINARY, CONTINUOUS, EQ, GE, LE, LinExpr, MilpModel, ModelError, Var,
                    quicksum)
from .solve import (BACKENDS, INFEASIBLE, OPTIMAL, UNBOUNDED, LpResult, SolveResult,
                    solve_lp_relaxation, solve_mip)

__all__ = [
    "BINARY", "CONTINUOUS", "EQ", "GE", "LE", "LinExpr", "MilpModel", "ModelError", "Var",
    "quicksum", "BACKENDS", "INFEASIBLE", "OPTIMAL", "UNBOUNDED", "LpResult", "SolveResult",
    "solve_lp_relaxation", "solve_mip",
]
