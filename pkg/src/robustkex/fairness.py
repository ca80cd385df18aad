"""Budgeted prioritization of highly-sensitized patients: weighted fairness, POF and %F."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, Optional, Tuple

from .instance import CompatibilityGraph, enumerate_cycles
from .matchopt import FormulationConfig, InfeasibleError, Matching, add_picef, clear, decode_matching
from .milp import OPTIMAL, MilpModel, quicksum, solve_mip


@dataclass(frozen=True)
class FairnessSpec:
    tau: float = 0.8
    gamma_weight: float = 0.0
    f: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if not self.gamma_weight >= 0:
            raise ValueError(f"gamma_weight must be >= 0, got {self.gamma_weight}")
        for name in ("f", "p"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


@dataclass(frozen=True)
class Partition:
    v_high: FrozenSet[int]
    v_low: FrozenSet[int]
    e_high: FrozenSet[int]
    e_low: FrozenSet[int]
    weights: Mapping[int, float] = field(default_factory=dict, compare=False)


def classify_sensitized(g: CompatibilityGraph, tau: float = 0.8) -> Partition:
    """Pairs with cpra >= tau are highly sensitized; edges are classed by their head."""
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    vh = frozenset(p.id for p in g.pairs if p.cpra >= tau)
    vl = frozenset(p.id for p in g.pairs) - vh
    eh = frozenset(e.id for e in g.edges if e.dst in vh)
    el = frozenset(e.id for e in g.edges) - eh
    return Partition(vh, vl, eh, el, {e.id: e.weight for e in g.edges})


def utilities(m: Matching, part: Partition) -> Tuple[float, float]:
    """(U_H, U_L): matched weight into highly / lowly sensitized pairs."""
    uh = ul = 0.0
    for eid in m.edge_ids():
        w = part.weights[eid]
        if eid in part.e_high:
            uh += w
        else:
            ul += w
    return uh, ul


def priority_weights(g: CompatibilityGraph, part: Partition, gamma: float) -> Dict[int, float]:
    """Edge weights scaled by (1 + gamma) on edges into highly sensitized pairs."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return {e.id: e.weight * (1 + gamma) if e.id in part.e_high else e.weight for e in g.edges}


def apply_p_plus(g: CompatibilityGraph, part: Partition, alpha: float, budget: float) -> Dict[int, float]:
    """Raise E_H weights by factor (1 + alpha), subject to alpha * total weight <= budget."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha * g.total_weight() > budget + 1e-12:
        raise ValueError(f"alpha {alpha} exceeds the prioritization budget {budget}")
    return {e.id: e.weight * (1 + alpha) if e.id in part.e_high else e.weight for e in g.edges}


def apply_p_minus(g: CompatibilityGraph, part: Partition, alpha: float, budget: float) -> Dict[int, float]:
    """Lower E_L weights by factor (1 - alpha), alpha in [0, 1], same budget check."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha * g.total_weight() > budget + 1e-12:
        raise ValueError(f"alpha {alpha} exceeds the prioritization budget {budget}")
    return {e.id: e.weight * (1 - alpha) if e.id in part.e_low else e.weight for e in g.edges}


def _clear_with(g: CompatibilityGraph, config: FormulationConfig, weights: Mapping[int, float]) -> Matching:
    """Clear under substitute weights, then report scores in the original weights."""
    alt = g.with_edge_values(weights, {e.id: 0.0 for e in g.edges})
    m = clear(alt, config)
    priority = m.nominal_score
    out = m.rescored(g)
    out.info["priority_objective"] = priority
    return out


def solve_weighted_fair(g: CompatibilityGraph, config: FormulationConfig = FormulationConfig(),
                        gamma_weight: float = 0.0, tau: float = 0.8,
                        part: Optional[Partition] = None) -> Matching:
    part = part or classify_sensitized(g, tau)
    m = _clear_with(g, config, priority_weights(g, part, gamma_weight))
    m.info["gamma"] = gamma_weight
    return m


@dataclass(frozen=True)
class Baselines:
    utilitarian: float
    max_uh: float
    max_ul: float


def baselines(g: CompatibilityGraph, config: FormulationConfig, part: Partition) -> Baselines:
    """Utilitarian optimum and the largest attainable U_H and U_L."""
    u = clear(g, config).nominal_score
    only_h = {e.id: (e.weight if e.id in part.e_high else 0.0) for e in g.edges}
    only_l = {e.id: (e.weight if e.id in part.e_low else 0.0) for e in g.edges}
    uh = _clear_with(g, config, only_h).info["priority_objective"]
    ul = _clear_with(g, config, only_l).info["priority_objective"]
    return Baselines(u, uh, ul)


def pof(chosen: Matching, utilitarian_opt: float) -> float:
    """Relative utilitarian loss of ``chosen``."""
    if utilitarian_opt <= 0:
        raise ValueError("price of fairness is undefined for a zero utilitarian optimum")
    return (utilitarian_opt - chosen.nominal_score) / utilitarian_opt


def percent_fair(m: Matching, max_uh: float, part: Partition) -> float:
    """U_H(m) / max U_H; 1 when no highly sensitized utility is attainable."""
    if max_uh <= 0:
        return 1.0
    return utilities(m, part)[0] / max_uh


def gamma_interval(f: float, p: float, ul_star: float, uh_star: float) -> Optional[Tuple[float, float]]:
    """Weights meeting both a %F target ``f`` and a POF cap ``p``; None if the range is empty."""
    if not (0 <= f < 1 and 0 <= p < 1):
        raise ValueError("f and p must lie in [0, 1)")
    if uh_star <= 0:
        raise ValueError("U_H* must be positive")
    lo = max(0.0, ul_star / uh_star / (1 - f) - 1)
    hi = p / (1 - p)
    if lo > hi:
        return None
    return lo, hi


def solve_variable_gamma(g: CompatibilityGraph, config: FormulationConfig,
                         interval: Optional[Tuple[float, float]], tau: float = 0.8,
                         part: Optional[Partition] = None) -> Matching:
    """Maximize (1+γ)U_H + U_L with γ a decision variable on the interval.

    The products γ·x_e are linearized with McCormick rows (big-M = upper end of the interval).
    """
    if interval is None:
        raise InfeasibleError("empty gamma interval")
    lo, hi = interval
    if not 0 <= lo <= hi:
        raise ValueError(f"invalid gamma interval {interval}")
    if config.formulation != "picef":
        raise ValueError("the variable-gamma model is built on picef")
    part = part or classify_sensitized(g, tau)
    cycles = enumerate_cycles(g, config.cycle_cap)
    m = MilpModel("variable_gamma")
    obj, dm, z, y = add_picef(m, g, cycles, config.chain_cap)
    gam = m.add_variable("gamma", lb=lo, ub=hi)
    cyc_of: Dict[int, list] = {e.id: [] for e in g.edges}
    for c in cycles:
        for eid in c.edges:
            cyc_of[eid].append(c)
    extra = []
    for e in g.edges:
        if e.id not in part.e_high:
            continue
        used = quicksum(v for (eid, _), v in y.items() if eid == e.id) \
            + quicksum(z[c.id] for c in cyc_of[e.id])
        t = m.add_variable(f"t_{e.id}", lb=0.0, ub=hi)
        m.add_constraint(t - hi * used, "<=", 0, name=f"t_hi_{e.id}")
        m.add_constraint(t - gam, "<=", -lo * (1 - used) if lo else 0, name=f"t_g_{e.id}")
        m.add_constraint(t - gam + hi * (1 - used), ">=", 0, name=f"t_lo_{e.id}")
        m.add_constraint(t - lo * used, ">=", 0, name=f"t_min_{e.id}")
        extra.append(e.weight * t)
    m.set_objective(obj + quicksum(extra), "max")
    res = solve_mip(m, backend=config.backend)
    if res.status != OPTIMAL:
        raise InfeasibleError(f"variable-gamma model is {res.status}")
    match = decode_matching(res, dm, g)
    match.info.update(priority_objective=res.objective, gamma=res.value("gamma", lo))
    return match


def fairness_report(m: Matching, part: Partition, base: Baselines, gamma: float) -> dict:
    pof_val = pof(m, base.utilitarian) if base.utilitarian > 0 else 0.0
    pf = percent_fair(m, base.max_uh, part)
    ratio = base.max_ul / base.max_uh if base.max_uh > 0 else None
    uh, ul = utilities(m, part)
    return {
        "gamma": float(gamma),
        "pof": pof_val,
        "percent_fair": pf,
        "bounds": {
            "pof_max": gamma / (1 + gamma),
            "pf_min": None if ratio is None else 1 - ratio / (1 + gamma),
        },
        "utilities": {"U_H": uh, "U_L": ul},
        "baselines": {"utilitarian": base.utilitarian, "max_UH": base.max_uh, "max_UL": base.max_ul},
        "max_uh_zero": base.max_uh <= 0,
        "matching": m.to_dict(),
    }
