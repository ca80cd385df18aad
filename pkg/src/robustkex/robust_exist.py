"""Edge-existence robust clearing: up to Γ failures, each wiping out one cycle or chain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .instance import Cycle, CompatibilityGraph, enumerate_cycles
from .matchopt import (DecodeMap, FormulationConfig, InfeasibleError, Matching, add_pitsp,
                       decode_matching)
from .milp import OPTIMAL, LinExpr, MilpModel, quicksum, solve_mip

@dataclass(frozen=True)
class ExistenceUncertainty:
    gamma: float = 0.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


def matched_objects(m: Matching) -> List[Tuple[float, int, int]]:
    """(weight, kind, id) for selected cycles (kind 0) and nonempty chains (kind 1), heaviest first."""
    objs = [(c.weight, 0, c.id) for c in m.cycles]
    objs += [(m.chain_weights.get(n, 0.0), 1, n) for n, es in m.chains.items() if es]
    return sorted(objs, key=lambda t: (-t[0], t[1], t[2]))


def worst_case_existence(m: Matching, gamma: float) -> float:
    """Matched weight left after the ``gamma`` heaviest cycles/chains are lost (fractional last one)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    objs = matched_objects(m)
    gp = min(gamma, len(objs))
    full = math.floor(gp)
    loss = sum(w for w, _, _ in objs[:full])
    if full < len(objs):
        loss += (gp - full) * objs[full][0]
    return m.nominal_score - loss


def add_robust_existence(m: MilpModel, g: CompatibilityGraph, cycles: Sequence[Cycle], L: int,
                         gamma: float, strengthen: bool = True) -> Tuple[LinExpr, LinExpr, DecodeMap]:
    """PI-TSP plus the linearized worst case; returns (robust objective, nominal objective, map).

    With ``strengthen`` the loss is also bounded below by ``sum(a_i * W_i)`` for fixed
    deviation vectors ``a`` on one or two objects (``W_i`` = object weight if selected).
    Every such row holds at integer points, so the optimum is unchanged; the LP bound
    tightens considerably.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    nominal, dm, pv = add_pitsp(m, g, cycles, L)
    z, wn = pv.z, pv.wn
    ndds = sorted(wn)
    if not cycles and not ndds:
        return nominal, nominal, dm
    fl, ce = math.floor(gamma), math.ceil(gamma)
    frac = gamma - fl
    big_w = max(g.total_weight(), len(cycles) + len(ndds), gamma) + 1

    starts = {n: quicksum(pv.y[e.id] for e in g.ndd_out(n)) for n in ndds}
    G = m.add_variable("G", ub=len(cycles) + len(ndds))
    m.add_constraint(quicksum(z.values()) + quicksum(starts.values()) - G, "==", 0, name="gdef")
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

    fc = {c.id: m.add_binary(f"fC_{c.id}") for c in cycles}
    pc = {c.id: m.add_binary(f"pC_{c.id}") for c in cycles}
    fhc = {c.id: m.add_binary(f"fhC_{c.id}") for c in cycles}
    phc = {c.id: m.add_binary(f"phC_{c.id}") for c in cycles}
    for c in cycles:
        for ind, prod, tag in ((fc, fhc, "f"), (pc, phc, "p")):
            m.add_constraint(prod[c.id] - ind[c.id], "<=", 0, name=f"{tag}hC_a_{c.id}")
            m.add_constraint(prod[c.id] - z[c.id], "<=", 0, name=f"{tag}hC_b_{c.id}")
            m.add_constraint(prod[c.id] - ind[c.id] - z[c.id], ">=", -1, name=f"{tag}hC_c_{c.id}")
    order = sorted(cycles, key=lambda c: (-c.weight, c.id))
    for a, b in zip(order, order[1:]):
        m.add_constraint(fc[a.id] - fc[b.id], ">=", 0, name=f"ordf_{a.id}_{b.id}")
        m.add_constraint(pc[a.id] - pc[b.id], ">=", 0, name=f"ordp_{a.id}_{b.id}")

    wmax = g.total_weight()
    fn = {n: m.add_binary(f"fN_{n}") for n in ndds}
    pn = {n: m.add_binary(f"pN_{n}") for n in ndds}
    fhn = {n: m.add_variable(f"fhN_{n}", lb=0.0, ub=wmax) for n in ndds}
    phn = {n: m.add_variable(f"phN_{n}", lb=0.0, ub=wmax) for n in ndds}
    F = {n: m.add_binary(f"F_{n}") for n in ndds}
    P = {n: m.add_binary(f"P_{n}") for n in ndds}
    for n in ndds:
        for ind, prod, tag in ((fn, fhn, "f"), (pn, phn, "p")):
            m.add_constraint(prod[n] - big_w * ind[n], "<=", 0, name=f"{tag}hN_a_{n}")
            m.add_constraint(prod[n] - wn[n], "<=", 0, name=f"{tag}hN_b_{n}")
            m.add_constraint(prod[n] - wn[n] - big_w * ind[n], ">=", -big_w, name=f"{tag}hN_c_{n}")
        for ind, prod, tag in ((fn, F, "F"), (pn, P, "P")):
            m.add_constraint(prod[n] - ind[n], "<=", 0, name=f"{tag}_a_{n}")
            m.add_constraint(prod[n] - starts[n], "<=", 0, name=f"{tag}_b_{n}")
            m.add_constraint(prod[n] - starts[n] - ind[n], ">=", -1, name=f"{tag}_c_{n}")
    for c in cycles:
        for n in ndds:
            q = m.add_binary(f"q_{c.id}_{n}")
            sfx = f"{c.id}_{n}"
            m.add_constraint(fc[c.id] + q - fn[n], ">=", 0, name=f"qf1_{sfx}")
            m.add_constraint(pc[c.id] + q - pn[n], ">=", 0, name=f"qp1_{sfx}")
            m.add_constraint(fn[n] + (1 - q) - fc[c.id], ">=", 0, name=f"qf2_{sfx}")
            m.add_constraint(pn[n] + (1 - q) - pc[c.id], ">=", 0, name=f"qp2_{sfx}")
            m.add_constraint(big_w * (1 - q) - c.weight + wn[n], ">=", 0, name=f"qw1_{sfx}")
            m.add_constraint(big_w * q - wn[n] + c.weight, ">=", 0, name=f"qw2_{sfx}")
    # unordered NDD pairs suffice: every row is stated in both directions
    for i_pos, i in enumerate(ndds):
        for j in ndds[i_pos + 1:]:
            q = m.add_binary(f"qN_{i}_{j}")
            sfx = f"{i}_{j}"
            m.add_constraint(fn[i] + q - fn[j], ">=", 0, name=f"qNf1_{sfx}")
            m.add_constraint(pn[i] + q - pn[j], ">=", 0, name=f"qNp1_{sfx}")
            m.add_constraint(fn[j] + (1 - q) - fn[i], ">=", 0, name=f"qNf2_{sfx}")
            m.add_constraint(pn[j] + (1 - q) - pn[i], ">=", 0, name=f"qNp2_{sfx}")
            m.add_constraint(big_w * q - wn[j] + wn[i], ">=", 0, name=f"qNw1_{sfx}")
            m.add_constraint(big_w * (1 - q) - wn[i] + wn[j], ">=", 0, name=f"qNw2_{sfx}")

    m.add_constraint(quicksum(P.values()) + quicksum(phc.values()) - hh + ce * h, "==", ce,
                     name="count_p")
    m.add_constraint(quicksum(F.values()) + quicksum(fhc.values()) - hh + fl * h, "==", fl,
                     name="count_f")
    wc = {c.id: c.weight for c in cycles}
    full_loss = quicksum(fhn.values()) + quicksum(wc[k] * v for k, v in fhc.items())
    part_loss = quicksum(phn.values()) + quicksum(wc[k] * v for k, v in phc.items())
    loss = (1 - frac) * full_loss + frac * part_loss
    if strengthen and gamma > 0:
        objs = [c.weight * z[c.id] for c in cycles] + [wn[n] for n in ndds]
        a1 = min(1.0, gamma)
        for i, wi in enumerate(objs):
            m.add_constraint(loss - a1 * wi, ">=", 0, name=f"loss1_{i}")
        if gamma > 1:
            a2 = min(1.0, gamma - 1)
            for i, wi in enumerate(objs):
                for j in range(i + 1, len(objs)):
                    wj = objs[j]
                    m.add_constraint(loss - wi - a2 * wj, ">=", 0, name=f"loss2_{i}_{j}")
                    if a2 < 1:
                        m.add_constraint(loss - a2 * wi - wj, ">=", 0, name=f"loss2_{j}_{i}")
    robust = nominal - loss
    return robust, nominal, dm


def build_robust_existence_model(g: CompatibilityGraph, cycles: Sequence[Cycle], L: int,
                                 gamma: float, strengthen: bool = True) -> Tuple[MilpModel, DecodeMap]:
    m = MilpModel("robust_existence")
    robust, _, dm = add_robust_existence(m, g, cycles, L, gamma, strengthen)
    m.set_objective(robust, "max")
    return m, dm


def solve_robust_existence(g: CompatibilityGraph, config: FormulationConfig = FormulationConfig(),
                           gamma: float = 0.0) -> Matching:
    """Matching maximizing the worst case over Γ failures.

    Ties are broken lexicographically: first by nominal score, then by the weight carried
    in cycles (chains come second, as in the loss ordering).
    """
    cycles = enumerate_cycles(g, config.cycle_cap)
    m = MilpModel("robust_existence")
    robust, nominal, dm = add_robust_existence(m, g, cycles, config.chain_cap, gamma)
    m.set_objective(robust, "max")
    res = solve_mip(m, backend=config.backend)
    if res.status != OPTIMAL:
        raise InfeasibleError(f"robust existence model is {res.status}")
    z_star = res.objective
    nodes, stages = res.nodes, 1
    has_chains = config.chain_cap >= 1 and g.n_ndds > 0
    stage_objs = []
    if gamma > 0:
        stage_objs.append(("robust_floor", robust, nominal))
    if has_chains and cycles:
        cyc = quicksum(c.weight * m.var(dm.z[c.id]) for c in cycles)
        stage_objs.append(("nominal_floor", nominal, cyc))
    for name, floor_expr, next_obj in stage_objs:
        m.add_constraint(floor_expr, ">=", res.objective - 1e-6, name=name)
        m.set_objective(next_obj, "max")
        res = solve_mip(m, backend=config.backend)
        if res.status != OPTIMAL:
            raise InfeasibleError(f"tie-break stage {name} is {res.status}")
        nodes += res.nodes
        stages += 1
    match = decode_matching(res, dm, g)
    match.robust_score = worst_case_existence(match, gamma)
    if abs(match.robust_score - z_star) > 1e-6:
        raise RuntimeError(f"model objective {z_star} != worst case {match.robust_score}")
    match.info.update(objective=z_star, gamma=gamma, nodes=nodes, stages=stages)
    return match


def existence_report(m: Matching, gamma: float) -> dict:
    return {
        "model": "existence",
        "gamma": float(gamma),
        "epsilon": None,
        "nominal_score": m.nominal_score,
        "robust_score": m.robust_score,
        "matching": m.to_dict(),
    }
