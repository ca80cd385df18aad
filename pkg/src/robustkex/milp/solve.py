"""LP relaxation (HiGHS via scipy) and a branch-and-bound MIP engine on top of it."""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import BINARY, EQ, LE, MatrixForm, MilpModel, ModelError

logger = logging.getLogger(__name__)

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

INT_TOL = 1e-6
OBJ_TOL = 1e-6


@dataclass
class LpResult:
    status: str
    objective: float = float("nan")
    values: Optional[np.ndarray] = None
    # d(objective)/d(rhs) per constraint name, in the model's own sense
    duals: Dict[str, float] = field(default_factory=dict)
    names: List[str] = field(default_factory=list)

    def value(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def assignment(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))


@dataclass
class SolveResult:
    status: str
    objective: float = float("nan")
    values: Optional[np.ndarray] = None
    names: List[str] = field(default_factory=list)
    integral: bool = False
    nodes: int = 0
    _lookup: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._lookup = {n: i for i, n in enumerate(self.names)}

    def value(self, name: str, default: float = 0.0) -> float:
        i = self._lookup.get(name)
        if i is None or self.values is None:
            return default
        return float(self.values[i])

    def assignment(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))


def _sense_sign(model: MilpModel) -> float:
    return -1.0 if model.sense == "max" else 1.0


def _run_lp(model: MilpModel, form: MatrixForm, lb: np.ndarray, ub: np.ndarray,
            want_duals: bool = False) -> LpResult:
    names = [v.name for v in model.variables]
    if model.num_vars == 0:
        for con in model.constraints:
            ok = {LE: 0.0 <= con.rhs + INT_TOL, EQ: abs(con.rhs) <= INT_TOL}.get(
                con.relation, 0.0 >= con.rhs - INT_TOL)
            if not ok:
                return LpResult(INFEASIBLE, names=names)
        duals = {c.name: 0.0 for c in model.constraints} if want_duals else {}
        return LpResult(OPTIMAL, model.objective_constant, np.zeros(0), duals, names)
    if np.any(lb > ub + 1e-12):
        return LpResult(INFEASIBLE, names=names)
    sign = _sense_sign(model)
    c = sign * model.objective_vector()
    kwargs = {}
    if form.a_ub.shape[0]:
        kwargs.update(A_ub=form.a_ub, b_ub=form.b_ub)
    if form.a_eq.shape[0]:
        kwargs.update(A_eq=form.a_eq, b_eq=form.b_eq)
    res = linprog(c, bounds=np.column_stack([lb, ub]), method="highs", **kwargs)
    if res.status == 2:
        return LpResult(INFEASIBLE, names=names)
    if res.status == 3:
        return LpResult(UNBOUNDED, names=names)
    if res.status != 0:
        raise RuntimeError(f"LP solver failed on {model.name}: {res.message}")
    x = np.asarray(res.x, dtype=float)
    obj = sign * float(res.fun) + model.objective_constant
    duals: Dict[str, float] = {}
    if want_duals:
        if form.a_ub.shape[0]:
            for r, (ci, s) in enumerate(form.ub_map):
                duals[model.constraints[ci].name] = sign * s * float(res.ineqlin.marginals[r])
        if form.a_eq.shape[0]:
            for r, ci in enumerate(form.eq_map):
                duals[model.constraints[ci].name] = sign * float(res.eqlin.marginals[r])
    return LpResult(OPTIMAL, obj, x, duals, names)


def solve_lp_relaxation(model: MilpModel, lb: Optional[np.ndarray] = None,
                        ub: Optional[np.ndarray] = None) -> LpResult:
    """Solve the continuous relaxation; duals are reported for every named constraint."""
    mlb, mub = model.bounds()
    return _run_lp(model, model.matrix_form(),
                   mlb if lb is None else lb, mub if ub is None else ub, want_duals=True)


def _most_fractional(x: np.ndarray, binaries: np.ndarray) -> Optional[int]:
    if binaries.size == 0:
        return None
    xb = x[binaries]
    frac = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
    mask = frac > INT_TOL
    if not mask.any():
        return None
    dist = np.abs(xb - 0.5)
    dist[~mask] = np.inf
    # argmin returns the first minimiser -> declaration order tie-break
    return int(binaries[int(np.argmin(dist))])


def _snap(x: np.ndarray, binaries: np.ndarray) -> np.ndarray:
    x = x.copy()
    if binaries.size:
        x[binaries] = np.round(x[binaries])
    return x


def _polish(model: MilpModel, form: MatrixForm, lb: np.ndarray, ub: np.ndarray,
            x: np.ndarray, binaries: np.ndarray) -> Tuple[np.ndarray, float]:
    """Round binaries and re-solve the continuous part so the point is exactly consistent.

    Big-M rows amplify a 1e-6 integrality slack; evaluating the rounded point without
    re-solving can overstate the objective.
    """
    xs = _snap(x, binaries)
    if binaries.size == 0:
        return xs, model.evaluate(xs)
    lb2, ub2 = lb.copy(), ub.copy()
    lb2[binaries] = ub2[binaries] = xs[binaries]
    lp = _run_lp(model, form, lb2, ub2)
    if lp.status != OPTIMAL:
        logger.warning("rounded incumbent infeasible on %s; keeping LP point", model.name)
        return x, model.evaluate(x)
    return lp.values, lp.objective


def _branch_and_bound(model: MilpModel, node_limit: Optional[int]) -> SolveResult:
    names = [v.name for v in model.variables]
    form = model.matrix_form()
    lb0, ub0 = model.bounds()
    binaries = model.binary_indices()
    sign = 1.0 if model.sense == "max" else -1.0  # internal: maximise sign*obj

    root = _run_lp(model, form, lb0, ub0)
    if root.status != OPTIMAL:
        return SolveResult(root.status, names=names, nodes=1)

    best_val = -np.inf
    best_x: Optional[np.ndarray] = None
    counter = itertools.count()
    heap: List[Tuple[float, int, np.ndarray, np.ndarray, LpResult]] = []
    current: Optional[Tuple[np.ndarray, np.ndarray, LpResult]] = (lb0, ub0, root)
    nodes = 1

    while current is not None or heap:
        if current is None:
            neg_bound, _, lb, ub, lp = heapq.heappop(heap)
            if -neg_bound <= best_val + 1e-7:
                continue
            current = (lb, ub, lp)
        lb, ub, lp = current
        current = None
        if lp is None:
            nodes += 1
            if node_limit is not None and nodes > node_limit:
                raise RuntimeError(f"node limit {node_limit} exceeded on {model.name}")
            lp = _run_lp(model, form, lb, ub)
            if lp.status == UNBOUNDED:
                return SolveResult(UNBOUNDED, names=names, nodes=nodes)
            if lp.status != OPTIMAL:
                continue
        val = sign * lp.objective
        if val <= best_val + 1e-7:
            continue
        j = _most_fractional(lp.values, binaries)
        if j is None:
            x, obj = _polish(model, form, lb, ub, lp.values, binaries)
            if sign * obj > best_val:
                best_val, best_x = sign * obj, x
            continue
        xj = lp.values[j]
        lb_down, ub_down = lb, ub.copy()
        ub_down[j] = 0.0
        lb_up, ub_up = lb.copy(), ub
        lb_up[j] = 1.0
        down = (lb_down, ub_down, None)
        up = (lb_up, ub_up, None)
        # plunge into the side the LP leans towards, queue the other
        first, second = (up, down) if xj >= 0.5 else (down, up)
        heapq.heappush(heap, (-val, next(counter), second[0], second[1], None))
        current = first

    if best_x is None:
        return SolveResult(INFEASIBLE, names=names, nodes=nodes)
    return SolveResult(OPTIMAL, sign * best_val, best_x, names, True, nodes)


def _highs_mip(model: MilpModel) -> SolveResult:
    names = [v.name for v in model.variables]
    if model.num_vars == 0:
        lp = _run_lp(model, model.matrix_form(), np.zeros(0), np.zeros(0))
        return SolveResult(lp.status, lp.objective, lp.values, names, True)
    form = model.matrix_form()
    sign = _sense_sign(model)
    cons = []
    if form.a_ub.shape[0]:
        cons.append(LinearConstraint(form.a_ub, -np.inf, form.b_ub))
    if form.a_eq.shape[0]:
        cons.append(LinearConstraint(form.a_eq, form.b_eq, form.b_eq))
    integrality = np.array([1 if v.kind == BINARY else 0 for v in model.variables])
    lb, ub = model.bounds()
    res = milp(sign * model.objective_vector(), integrality=integrality, bounds=Bounds(lb, ub),
               constraints=cons, options={"mip_rel_gap": 0.0})
    if res.status == 2:
        return SolveResult(INFEASIBLE, names=names)
    if res.status == 3:
        return SolveResult(UNBOUNDED, names=names)
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"HiGHS MIP failed on {model.name}: {res.message}")
    x, obj = _polish(model, form, lb, ub, np.asarray(res.x, dtype=float), model.binary_indices())
    return SolveResult(OPTIMAL, obj, x, names, True)


BACKENDS = ("builtin", "highs")


def solve_mip(model: MilpModel, backend: str = "builtin",
              node_limit: Optional[int] = None) -> SolveResult:
    """Solve to global optimality.

    ``builtin`` is a best-bound branch-and-bound with plunging over HiGHS LP
    relaxations, branching on the fractional binary closest to 0.5 (first in
    declaration order on ties). ``highs`` hands the whole MIP to HiGHS.
    """
    if backend == "builtin":
        result = _branch_and_bound(model, node_limit)
    elif backend == "highs":
        result = _highs_mip(model)
    else:
        raise ModelError(f"unknown backend {backend!r}")
    logger.debug("solved %s: %s obj=%s nodes=%d", model.name, result.status,
                 result.objective, result.nodes)
    return result
