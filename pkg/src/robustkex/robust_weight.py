"""Edge-weight robust clearing under a budgeted interval uncertainty set."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .instance import Cycle, CompatibilityGraph, enumerate_cycles
from .matchopt import (DecodeMap, FormulationConfig, InfeasibleError, Matching, PICEF, add_picef,
                       clear, decode_matching)
from .milp import (OPTIMAL, LpResult, MilpModel, SolveResult, quicksum, solve_lp_relaxation,
                   solve_mip)

logger = logging.getLogger(__name__)

PRICE_TOL = 1e-9


@dataclass(frozen=True)
class WeightUncertainty:
    """Either a constant budget ``gamma`` or a protection level ``epsilon`` (exactly one)."""

    gamma: Optional[float] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if (self.gamma is None) == (self.epsilon is None):
            raise ValueError("give exactly one of gamma and epsilon")
        if self.gamma is not None and not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.epsilon is not None and not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")


def edge_discounts(g: CompatibilityGraph) -> Dict[int, float]:
    return {e.id: e.discount for e in g.edges}


# -- probability bound and budget function ------------------------------------------


def _bound_exact(n: int, eta: Fraction) -> Fraction:
    fl = math.floor(eta)
    mu = eta - fl
    tail = sum(comb(n, l) for l in range(fl + 1, n + 1))
    return ((1 - mu) * comb(n, fl) + tail) / Fraction(2 ** n)


def bound_B(n: int, gamma: float) -> float:
    """Probability bound for an ``n``-edge matching at budget ``gamma`` (exact rational arithmetic)."""
    if n < 1 or int(n) != n:
        raise ValueError(f"n must be a positive integer, got {n}")
    g = Fraction(gamma)
    if not 0 <= g <= n:
        raise ValueError(f"gamma must lie in [0, {n}], got {gamma}")
    return float(_bound_exact(int(n), (g + n) / 2))


def budget_beta(n: int, epsilon: float) -> float:
    """Smallest budget whose bound is at most ``epsilon``; ``n`` when none exists, 0 when Γ=0 suffices.

    B is linear in Γ between the points where (Γ+n)/2 is an integer, so each segment is
    inverted in closed form.
    """
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if n < 1:
        return 0.0
    eps = Fraction(epsilon)
    if _bound_exact(n, Fraction(n, 2)) <= eps:
        return 0.0
    if eps < Fraction(1, 2 ** n):
        return float(n)
    for m in range(math.floor(Fraction(n, 2)), n):
        lo = max(Fraction(m), Fraction(n, 2))
        hi = Fraction(m + 1)
        if _bound_exact(n, hi) <= eps:
            # solve (1 - (eta - m)) C(n, m) + tail = eps 2^n on this segment
            tail = sum(comb(n, l) for l in range(m + 1, n + 1))
            eta = m + 1 - (eps * 2 ** n - tail) / comb(n, m)
            eta = max(eta, lo)
            return float(2 * eta - n)
    return float(n)


# -- worst case ------------------------------------------------------------------------


def worst_case_weight(m: Matching, discounts: Mapping[int, float], gamma: float) -> float:
    """Minimum matched weight when ``gamma`` units of deviation hit the largest discounts."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    ds = sorted(((discounts.get(e, 0.0), e) for e in m.edge_ids()), key=lambda t: (-t[0], t[1]))
    gp = min(gamma, len(ds))
    full = math.floor(gp)
    loss = sum(d for d, _ in ds[:full])
    if full < len(ds):
        loss += (gp - full) * ds[full][0]
    return m.nominal_score - loss


def discount_order(g: CompatibilityGraph) -> List[int]:
    """Edge ids by discount descending, ties by ascending id."""
    return [e.id for e in sorted(g.edges, key=lambda e: (-e.discount, e.id))]


# -- MILP --------------------------------------------------------------------------------


def add_robust_weight(m: MilpModel, g: CompatibilityGraph, cycles: Sequence[Cycle], L: int,
                      gamma: float, cardinality: Optional[int] = None):
    """PICEF plus the linearized worst-case discount; returns (objective, decode map)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    obj, dm, z, y = add_picef(m, g, cycles, L)
    if not g.edges:
        return obj, dm
    n_e = len(g.edges)
    fl, ce = math.floor(gamma), math.ceil(gamma)
    frac = gamma - fl
    big_w = n_e + gamma + 1

    cyc_of: Dict[int, List[Cycle]] = {e.id: [] for e in g.edges}
    for c in cycles:
        for eid in c.edges:
            cyc_of[eid].append(c)
    yh = {e.id: m.add_binary(f"yh_{e.id}") for e in g.edges}
    for e in g.edges:
        chain = [v for (eid, _), v in y.items() if eid == e.id]
        m.add_constraint(quicksum(chain) + quicksum(z[c.id] for c in cyc_of[e.id]) - yh[e.id],
                         "==", 0, name=f"link_{e.id}")
    G = m.add_variable("G", ub=n_e)
    m.add_constraint(quicksum(yh.values()) - G, "==", 0, name="gdef")
    if cardinality is not None:
        m.add_constraint(G, "<=", cardinality, name="card")
    h = m.add_binary("h")
    gp = m.add_variable("gamma_prime", lb=0.0)
    m.add_constraint(gamma - G, "<=", big_w * h, name="h_lo")
    m.add_constraint(G - gamma, "<=", big_w * (1 - h), name="h_hi")
    m.add_constraint(G - big_w * h, "<=", gp, name="gp_lo1")
    m.add_constraint(gamma - big_w * (1 - h), "<=", gp, name="gp_lo2")
    hh = m.add_variable("hhat", lb=0.0, ub=big_w)
    m.add_constraint(hh, "<=", big_w * h, name="hh_h")
    m.add_constraint(hh, "<=", G, name="hh_g")
    m.add_constraint(hh, ">=", G - big_w * (1 - h), name="hh_lo")

    gf = {e.id: m.add_binary(f"gf_{e.id}") for e in g.edges}
    gpv = {e.id: m.add_binary(f"gp_{e.id}") for e in g.edges}
    ghf = {e.id: m.add_binary(f"ghf_{e.id}") for e in g.edges}
    ghp = {e.id: m.add_binary(f"ghp_{e.id}") for e in g.edges}
    for e in g.edges:
        for ind, prod, tag in ((gf, ghf, "f"), (gpv, ghp, "p")):
            m.add_constraint(prod[e.id] - ind[e.id], "<=", 0, name=f"g{tag}_a_{e.id}")
            m.add_constraint(prod[e.id] - yh[e.id], "<=", 0, name=f"g{tag}_b_{e.id}")
            m.add_constraint(prod[e.id] - ind[e.id] - yh[e.id], ">=", -1, name=f"g{tag}_c_{e.id}")
    order = discount_order(g)
    for a, b in zip(order, order[1:]):
        m.add_constraint(gf[a] - gf[b], ">=", 0, name=f"ordf_{a}_{b}")
        m.add_constraint(gpv[a] - gpv[b], ">=", 0, name=f"ordp_{a}_{b}")
    m.add_constraint(quicksum(ghp.values()) - hh + ce * h, "==", ce, name="count_p")
    m.add_constraint(quicksum(ghf.values()) - hh + fl * h, "==", fl, name="count_f")

    d = edge_discounts(g)
    obj = obj - (1 - frac) * quicksum(d[e] * v for e, v in ghf.items()) \
        - frac * quicksum(d[e] * v for e, v in ghp.items())
    return obj, dm


def build_robust_weight_model(g: CompatibilityGraph, cycles: Sequence[Cycle], L: int, gamma: float,
                              cardinality: Optional[int] = None) -> Tuple[MilpModel, DecodeMap]:
    m = MilpModel("robust_weight")
    obj, dm = add_robust_weight(m, g, cycles, L, gamma, cardinality)
    m.set_objective(obj, "max")
    return m, dm


def _finish(g: CompatibilityGraph, res: SolveResult, dm: DecodeMap, gamma: float) -> Matching:
    match = decode_matching(res, dm, g)
    match.robust_score = worst_case_weight(match, edge_discounts(g), gamma)
    if abs(match.robust_score - res.objective) > 1e-6:
        raise RuntimeError(f"model objective {res.objective} != worst case {match.robust_score}")
    match.info.update(objective=res.objective, gamma=gamma, nodes=res.nodes)
    return match


def _check_picef(config: FormulationConfig) -> None:
    if config.formulation != PICEF:
        raise ValueError("the edge-weight robust model is built on picef")


def solve_robust_weight_constant(g: CompatibilityGraph, config: FormulationConfig = FormulationConfig(),
                                 gamma: float = 0.0, pricing: bool = False,
                                 cardinality: Optional[int] = None) -> Matching:
    """Optimal matching under a constant budget; ``pricing`` switches to branch-and-price."""
    _check_picef(config)
    if pricing:
        if cardinality is not None:
            raise ValueError("branch-and-price does not take a cardinality cap")
        return branch_and_price(g, config, gamma)
    cycles = enumerate_cycles(g, config.cycle_cap)
    model, dm = build_robust_weight_model(g, cycles, config.chain_cap, gamma, cardinality)
    res = solve_mip(model, backend=config.backend)
    if res.status != OPTIMAL:
        raise InfeasibleError(f"robust weight model is {res.status}")
    return _finish(g, res, dm, gamma)


# -- pricing --------------------------------------------------------------------------------


def modified_weights(g: CompatibilityGraph, gamma: float) -> Dict[int, float]:
    """Pricing weights: the discount is charged only where every matching using the edge pays it.

    Edges ranked within the top floor(Γ) discounts are fully discounted in any matching
    that uses them; the next edge pays at least the fractional share.
    """
    order = discount_order(g)
    fl = math.floor(gamma)
    frac = gamma - fl
    out = {e.id: e.weight for e in g.edges}
    for rank, eid in enumerate(order):
        e = g.edge(eid)
        if rank < fl:
            out[eid] = e.weight - e.discount
        elif rank == fl and frac > 0:
            out[eid] = e.weight - frac * e.discount
    return out


def cycle_prices(g: CompatibilityGraph, lp: LpResult, gamma: float, cap: int,
                 cycles: Optional[Sequence[Cycle]] = None) -> Dict[int, float]:
    """Price of every cycle (by id) under the pricing weights and vertex-capacity duals."""
    if cycles is None:
        cycles = enumerate_cycles(g, cap)
    w = modified_weights(g, gamma)
    out = {}
    for c in cycles:
        price = 0.0
        for v, eid in zip(c.vertices[1:] + c.vertices[:1], c.edges):
            price += w[eid] - lp.duals.get(f"cap_{v}", 0.0)
        out[c.id] = price
    return out


def cycle_price(g: CompatibilityGraph, lp: LpResult, discounts: Optional[Mapping[int, float]] = None,
                gamma: float = 0.0, cap: int = 3,
                cycles: Optional[Sequence[Cycle]] = None) -> List[Cycle]:
    """Cycles with positive price, highest price first; empty means none can improve the LP."""
    if discounts is not None:
        g = g.with_edge_values({}, discounts)
    if cycles is None:
        cycles = enumerate_cycles(g, cap)
    prices = cycle_prices(g, lp, gamma, cap, cycles)
    pos = [c for c in cycles if prices[c.id] > PRICE_TOL]
    return sorted(pos, key=lambda c: (-prices[c.id], c.id))


def _reduced_cost(c: Cycle, lp: LpResult) -> float:
    rc = c.weight
    for v in c.vertices:
        rc -= lp.duals.get(f"cap_{v}", 0.0)
    for eid in c.edges:
        rc -= lp.duals.get(f"link_{eid}", 0.0)
    return rc


def _closest_to_half(model: MilpModel, x: np.ndarray) -> Optional[int]:
    best, best_dist = None, None
    for j in model.binary_indices():
        f = x[j] - math.floor(x[j])
        if min(f, 1 - f) <= 1e-6:
            continue
        dist = abs(x[j] - 0.5)
        if best is None or dist < best_dist:
            best, best_dist = int(j), dist
    return best


def branch_and_price(g: CompatibilityGraph, config: FormulationConfig, gamma: float,
                     node_limit: Optional[int] = None) -> Matching:
    """Depth-first branch-and-price starting from an empty cycle pool.

    Columns come from the modified-weight pricer. Two safeguards keep the search exact:
    when the pricer finds nothing, exact reduced costs of the remaining cycles are
    checked; an infeasible node LP is retried with every cycle before it is pruned.
    """
    _check_picef(config)
    all_cycles = enumerate_cycles(g, config.cycle_cap)
    pool: set = set()
    stats = {"nodes": 0, "lps": 0, "priced": 0, "fallback": 0}
    best_val: float = -math.inf
    best: Optional[Matching] = None

    def node(fixed: Dict[str, float]):
        while True:
            cyc = [c for c in all_cycles if c.id in pool]
            model, dm = build_robust_weight_model(g, cyc, config.chain_cap, gamma)
            lb, ub = model.bounds()
            for name, val in fixed.items():
                j = model.var(name).index
                lb[j] = ub[j] = val
            lp = solve_lp_relaxation(model, lb, ub)
            stats["lps"] += 1
            if lp.status != OPTIMAL:
                if len(pool) < len(all_cycles):
                    pool.update(c.id for c in all_cycles)
                    continue
                return None
            rest = [c for c in all_cycles if c.id not in pool]
            new = [c for c in cycle_price(g, lp, None, gamma, config.cycle_cap, rest)]
            if new:
                stats["priced"] += len(new)
            else:
                new = [c for c in rest if _reduced_cost(c, lp) > PRICE_TOL]
                stats["fallback"] += len(new)
            if not new:
                return model, dm, lp
            pool.update(c.id for c in new)

    stack: List[Dict[str, float]] = [{}]
    while stack:
        fixed = stack.pop()
        stats["nodes"] += 1
        if node_limit is not None and stats["nodes"] > node_limit:
            raise RuntimeError(f"branch-and-price node limit {node_limit} exceeded")
        out = node(fixed)
        if out is None:
            continue
        model, dm, lp = out
        if lp.objective <= best_val + 1e-7:
            continue
        j = _closest_to_half(model, lp.values)
        if j is None:
            x = lp.values.copy()
            bins = model.binary_indices()
            x[bins] = np.round(x[bins])
            res = SolveResult(OPTIMAL, model.evaluate(x), x, lp.names, True, stats["nodes"])
            best_val, best = res.objective, _finish(g, res, dm, gamma)
            continue
        name = model.variables[j].name
        # zero branch explored first
        stack.append({**fixed, name: 1.0})
        stack.append({**fixed, name: 0.0})

    if best is None:
        raise InfeasibleError("branch-and-price found no feasible matching")
    best.info.update(pricing=True, pool=len(pool), **stats)
    return best


# -- variable budget -------------------------------------------------------------------------


def max_cardinality(g: CompatibilityGraph, config: FormulationConfig) -> int:
    unit = g.with_edge_values({e.id: 1.0 for e in g.edges}, {e.id: 0.0 for e in g.edges})
    return int(round(clear(unit, config).nominal_score))


def solve_robust_weight_variable(g: CompatibilityGraph, config: FormulationConfig = FormulationConfig(),
                                 epsilon: float = 0.1) -> Matching:
    """Variable-budget robust matching via cardinality-restricted constant-budget solves.

    Each candidate is scored at the budget its own edge count implies; ties keep the
    smaller cardinality cap.
    """
    _check_picef(config)
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    d = edge_discounts(g)
    best = Matching.build(g, (), {})
    best.robust_score = 0.0
    best.info.update(k=0, gamma=0.0, epsilon=epsilon)
    k_max = max_cardinality(g, config) if g.edges else 0
    cycles = enumerate_cycles(g, config.cycle_cap)
    for k in range(1, k_max + 1):
        gamma_k = budget_beta(k, epsilon)
        model, dm = build_robust_weight_model(g, cycles, config.chain_cap, gamma_k, cardinality=k)
        res = solve_mip(model, backend=config.backend)
        if res.status != OPTIMAL:
            raise InfeasibleError(f"cardinality-{k} model is {res.status}")
        cand = decode_matching(res, dm, g)
        own = budget_beta(cand.num_edges(), epsilon) if cand.num_edges() else 0.0
        cand.robust_score = worst_case_weight(cand, d, own)
        cand.info.update(k=k, gamma=own, epsilon=epsilon, objective=res.objective)
        logger.debug("k=%d gamma=%.6f candidate %.6f", k, gamma_k, cand.robust_score)
        if cand.robust_score > best.robust_score + 1e-9:
            best = cand
    best.info["k_max"] = k_max
    return best


def weight_report(m: Matching, gamma: float, epsilon: Optional[float] = None) -> dict:
    return {
        "gamma": float(gamma),
        "epsilon": None if epsilon is None else float(epsilon),
        "nominal_score": m.nominal_score,
        "robust_score": m.robust_score,
        "matching": m.to_dict(),
    }
