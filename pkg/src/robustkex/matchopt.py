"""Deterministic clearing: PICEF and PI-TSP models, decoding, and an exhaustive oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .instance import Cycle, CompatibilityGraph, Edge, VertexRef, cycle_name, enumerate_cycles
from .milp import OPTIMAL, MilpModel, SolveResult, quicksum, solve_mip

logger = logging.getLogger(__name__)

PICEF, PITSP = "picef", "pitsp"


class DecodeError(RuntimeError):
    """Solver assignment does not describe a valid matching."""


class InfeasibleError(RuntimeError):
    """The requested clearing problem has no feasible solution."""


@dataclass(frozen=True)
class FormulationConfig:
    formulation: str = PICEF
    cycle_cap: int = 3
    chain_cap: int = 4
    min_chain_len: int = 0
    backend: str = "builtin"

    def __post_init__(self):
        if self.formulation not in (PICEF, PITSP):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.cycle_cap < 2:
            raise ValueError("cycle cap K must be >= 2")
        if self.chain_cap < 0:
            raise ValueError("chain cap L must be >= 0")
        if not 0 <= self.min_chain_len <= max(self.chain_cap, 0):
            raise ValueError("min chain length must satisfy 0 <= L_min <= L")
        if self.min_chain_len and self.formulation != PITSP:
            raise ValueError("a minimum chain length needs the pitsp formulation")


@dataclass
class Matching:
    """Vertex-disjoint cycles plus NDD-initiated chains (edge-id sequences)."""

    cycles: Tuple[Cycle, ...] = ()
    chains: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    nominal_score: float = 0.0
    robust_score: Optional[float] = None
    info: dict = field(default_factory=dict, compare=False)
    chain_weights: Dict[int, float] = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, g: CompatibilityGraph, cycles: Sequence[Cycle],
              chains: Dict[int, Sequence[int]]) -> "Matching":
        full = {n.id: tuple(chains.get(n.id, ())) for n in g.ndds}
        cycles = tuple(sorted(cycles, key=lambda c: c.id))
        score = sum(c.weight for c in cycles)
        cw = {n: float(sum(g.edge(e).weight for e in es)) for n, es in full.items()}
        return cls(cycles, full, float(score + sum(cw.values())), chain_weights=cw)

    def edge_ids(self) -> List[int]:
        out = [e for c in self.cycles for e in c.edges]
        out += [e for n in sorted(self.chains) for e in self.chains[n]]
        return out

    def num_edges(self) -> int:
        return len(self.edge_ids())

    def chain_weight(self, g: CompatibilityGraph, ndd: int) -> float:
        return float(sum(g.edge(e).weight for e in self.chains.get(ndd, ())))

    def is_empty(self) -> bool:
        return not self.cycles and not any(self.chains.values())

    def rescored(self, g: CompatibilityGraph) -> "Matching":
        """Same structure, weights taken from ``g`` (cycle ids are weight-independent)."""
        cycles = [replace(c, weight=float(sum(g.edge(e).weight for e in c.edges)))
                  for c in self.cycles]
        m = Matching.build(g, cycles, self.chains)
        m.info = dict(self.info)
        return m

    def to_dict(self) -> dict:
        return {
            "score": self.nominal_score,
            "cycles": [list(c.edges) for c in self.cycles],
            "chains": {str(n): list(es) for n, es in sorted(self.chains.items()) if es},
        }


def validate_matching(g: CompatibilityGraph, m: Matching, cycle_cap: int, chain_cap: int) -> None:
    """Raise ``ValueError`` unless ``m`` is a feasible matching under the caps."""
    used = set()
    for c in m.cycles:
        if len(c) > cycle_cap:
            raise ValueError(f"cycle {c.vertices} longer than cap {cycle_cap}")
        for i, eid in enumerate(c.edges):
            e = g.edge(eid)
            if e.src != VertexRef("pair", c.vertices[i]) or e.dst != c.vertices[(i + 1) % len(c)]:
                raise ValueError(f"cycle {c.vertices} edges do not close")
        for v in c.vertices:
            if v in used:
                raise ValueError(f"pair {v} used twice")
            used.add(v)
    for n, es in m.chains.items():
        if len(es) > chain_cap:
            raise ValueError(f"chain from ndd {n} longer than cap {chain_cap}")
        prev = VertexRef("ndd", n)
        for eid in es:
            e = g.edge(eid)
            if e.src != prev:
                raise ValueError(f"chain from ndd {n} is not contiguous at edge {eid}")
            if e.dst in used:
                raise ValueError(f"pair {e.dst} used twice")
            used.add(e.dst)
            prev = VertexRef("pair", e.dst)
    expected = sum(c.weight for c in m.cycles) + sum(
        g.edge(e).weight for es in m.chains.values() for e in es)
    if abs(expected - m.nominal_score) > 1e-6:
        raise ValueError("nominal score does not match the matching's weight")


# -- models -----------------------------------------------------------------------


@dataclass
class DecodeMap:
    formulation: str
    cycles: List[Cycle]
    z: Dict[int, str]                                   # cycle id -> var name
    chain_vars: Dict[Tuple[int, int], str] = field(default_factory=dict)  # PICEF (edge, pos)
    y: Dict[int, str] = field(default_factory=dict)     # PI-TSP edge -> var name
    chain_cap: int = 0


def add_picef(m: MilpModel, g: CompatibilityGraph, cycles: Sequence[Cycle], L: int):
    """Declare PICEF variables/constraints in ``m``; returns (nominal objective, decode map)."""
    z = {c.id: m.add_binary(f"z_{cycle_name(c)}") for c in cycles}
    y: Dict[Tuple[int, int], object] = {}
    if L >= 1:
        for e in g.edges:
            # NDD edges only open a chain; pair edges sit at positions 2..L
            for k in ([1] if e.from_ndd else range(2, L + 1)):
                y[e.id, k] = m.add_binary(f"y_{e.id}_{k}")

    by_vertex: Dict[int, List[Cycle]] = {p.id: [] for p in g.pairs}
    for c in cycles:
        for v in c.vertices:
            by_vertex[v].append(c)

    for p in g.pairs:
        inflow = [y[e.id, k] for e in g.in_edges(p.id) for k in range(1, L + 1) if (e.id, k) in y]
        m.add_constraint(quicksum(inflow) + quicksum(z[c.id] for c in by_vertex[p.id]),
                         "<=", 1, name=f"cap_{p.id}")
    for n in g.ndds:
        outs = [y[e.id, 1] for e in g.ndd_out(n.id) if (e.id, 1) in y]
        if outs:
            m.add_constraint(quicksum(outs), "<=", 1, name=f"ndd_{n.id}")
    for p in g.pairs:
        for k in range(1, L):
            outs = [y[e.id, k + 1] for e in g.pair_out(p.id) if (e.id, k + 1) in y]
            if not outs:
                continue
            ins = [y[e.id, k] for e in g.in_edges(p.id) if (e.id, k) in y]
            m.add_constraint(quicksum(ins) - quicksum(outs), ">=", 0, name=f"flow_{p.id}_{k}")

    obj = quicksum(g.edge(eid).weight * var for (eid, _), var in y.items())
    obj = obj + quicksum(c.weight * z[c.id] for c in cycles)
    dm = DecodeMap(PICEF, list(cycles), {cid: v.name for cid, v in z.items()},
                   chain_vars={key: v.name for key, v in y.items()}, chain_cap=L)
    return obj, dm, z, y


def build_picef(g: CompatibilityGraph, cycles: Sequence[Cycle], L: int) -> Tuple[MilpModel, DecodeMap]:
    m = MilpModel("picef")
    obj, dm, _, _ = add_picef(m, g, cycles, L)
    m.set_objective(obj, "max")
    return m, dm


@dataclass
class PitspVars:
    z: Dict[int, object]
    y: Dict[int, object]
    yn: Dict[Tuple[int, int], object]     # (ndd, edge) -> var
    wn: Dict[int, object]                 # ndd -> chain weight


def add_pitsp(m: MilpModel, g: CompatibilityGraph, cycles: Sequence[Cycle], L: int,
              L_min: int = 0) -> Tuple[object, DecodeMap, PitspVars]:
    """Declare the position-indexed TSP model in ``m``.

    Position variables run ``p_e in [1, L+1]``: the out-edges of a chain's last vertex
    carry position L+1 even though they are unused.
    """
    z = {c.id: m.add_binary(f"z_{cycle_name(c)}") for c in cycles}
    by_vertex: Dict[int, List[Cycle]] = {p.id: [] for p in g.pairs}
    for c in cycles:
        for v in c.vertices:
            by_vertex[v].append(c)
    y: Dict[int, object] = {}
    yn: Dict[Tuple[int, int], object] = {}
    wn: Dict[int, object] = {}

    if L >= 1 and g.n_ndds:
        big_m = L + 1
        wmax = g.total_weight()
        for e in g.edges:
            y[e.id] = m.add_binary(f"y_{e.id}")
        for n in g.ndds:
            for e in g.edges:
                # a chain labelled n can only leave through n's own out-edges
                if e.from_ndd and e.src.id != n.id:
                    continue
                yn[n.id, e.id] = m.add_binary(f"yn_{n.id}_{e.id}")
            wn[n.id] = m.add_variable(f"wN_{n.id}", lb=0.0, ub=wmax)
        fi = {p.id: m.add_variable(f"fi_{p.id}", ub=1.0) for p in g.pairs}
        fo = {p.id: m.add_variable(f"fo_{p.id}", ub=1.0) for p in g.pairs}
        fo_ndd = {n.id: m.add_variable(f"fo_n{n.id}", ub=1.0) for n in g.ndds}
        fin = {(p.id, n.id): m.add_variable(f"fin_{p.id}_{n.id}", ub=1.0)
               for p in g.pairs for n in g.ndds}
        fon = {(p.id, n.id): m.add_variable(f"fon_{p.id}_{n.id}", ub=1.0)
               for p in g.pairs for n in g.ndds}
        pe = {e.id: m.add_variable(f"p_{e.id}", lb=1.0, ub=L + 1) for e in g.edges}
        pv = {p.id: m.add_variable(f"pv_{p.id}", lb=0.0, ub=L) for p in g.pairs}
        ph = {e.id: m.add_variable(f"ph_{e.id}", lb=0.0, ub=L + 1) for e in g.edges}

        for n in g.ndds:
            mine = [(eid, v) for (nn, eid), v in yn.items() if nn == n.id]
            m.add_constraint(quicksum(g.edge(eid).weight * v for eid, v in mine) - wn[n.id],
                             "==", 0, name=f"wdef_{n.id}")
            m.add_constraint(quicksum(v for _, v in mine), "<=", L, name=f"chaincap_{n.id}")
            if L_min > 0:
                starts = [yn[n.id, e.id] for e in g.ndd_out(n.id)]
                m.add_constraint(quicksum(v for _, v in mine) - L_min * quicksum(starts), ">=", 0,
                                 name=f"minlen_{n.id}")
        for e in g.edges:
            m.add_constraint(quicksum(v for (nn, eid), v in yn.items() if eid == e.id) - y[e.id],
                             "==", 0, name=f"ylink_{e.id}")
        for p in g.pairs:
            zsum = quicksum(z[c.id] for c in by_vertex[p.id])
            m.add_constraint(quicksum(y[e.id] for e in g.in_edges(p.id)) - fi[p.id], "==", 0,
                             name=f"fin_{p.id}")
            m.add_constraint(quicksum(y[e.id] for e in g.pair_out(p.id)) - fo[p.id], "==", 0,
                             name=f"fout_{p.id}")
            m.add_constraint(fi[p.id] + zsum, "<=", 1, name=f"cap_{p.id}")
            m.add_constraint(fo[p.id] - fi[p.id], "<=", 0, name=f"cont_{p.id}")
            for n in g.ndds:
                m.add_constraint(quicksum(yn[n.id, e.id] for e in g.in_edges(p.id)
                                          if (n.id, e.id) in yn) - fin[p.id, n.id],
                                 "==", 0, name=f"finn_{p.id}_{n.id}")
                m.add_constraint(quicksum(yn[n.id, e.id] for e in g.pair_out(p.id))
                                 - fon[p.id, n.id], "==", 0, name=f"foutn_{p.id}_{n.id}")
                m.add_constraint(fon[p.id, n.id] - fin[p.id, n.id], "<=", 0,
                                 name=f"contn_{p.id}_{n.id}")
        for n in g.ndds:
            m.add_constraint(quicksum(y[e.id] for e in g.ndd_out(n.id)) - fo_ndd[n.id], "==", 0,
                             name=f"fout_n{n.id}")
            m.add_constraint(fo_ndd[n.id], "<=", 1, name=f"ndd_{n.id}")
        for e in g.edges:
            if e.from_ndd:
                m.add_constraint(pe[e.id], "==", 1, name=f"pfix_{e.id}")
            m.add_constraint(ph[e.id] - big_m * y[e.id], "<=", 0, name=f"phy_{e.id}")
            m.add_constraint(ph[e.id] - pe[e.id], "<=", 0, name=f"php_{e.id}")
            m.add_constraint(pe[e.id] - big_m * (1 - y[e.id]) - ph[e.id], "<=", 0,
                             name=f"phl_{e.id}")
        for p in g.pairs:
            m.add_constraint(pv[p.id] - quicksum(ph[e.id] for e in g.in_edges(p.id)), "==", 0,
                             name=f"ppos_{p.id}")
            for e in g.pair_out(p.id):
                m.add_constraint(pe[e.id] - pv[p.id], "==", 1, name=f"pnext_{e.id}")
    else:
        for p in g.pairs:
            if by_vertex[p.id]:
                m.add_constraint(quicksum(z[c.id] for c in by_vertex[p.id]), "<=", 1,
                                 name=f"cap_{p.id}")

    obj = quicksum(wn.values()) + quicksum(c.weight * z[c.id] for c in cycles)
    dm = DecodeMap(PITSP, list(cycles), {cid: v.name for cid, v in z.items()},
                   y={eid: v.name for eid, v in y.items()}, chain_cap=L)
    return obj, dm, PitspVars(z, y, yn, wn)


def build_pitsp(g: CompatibilityGraph, cycles: Sequence[Cycle], L: int,
                L_min: int = 0) -> Tuple[MilpModel, DecodeMap]:
    m = MilpModel("pitsp")
    obj, dm, _ = add_pitsp(m, g, cycles, L, L_min)
    m.set_objective(obj, "max")
    return m, dm


def decode_matching(result: SolveResult, dm: DecodeMap, g: CompatibilityGraph) -> Matching:
    if result.status != OPTIMAL:
        raise DecodeError(f"cannot decode a {result.status} result")
    on = lambda name: result.value(name) > 0.5  # noqa: E731
    cycles = [c for c in dm.cycles if on(dm.z[c.id])]
    chains: Dict[int, Tuple[int, ...]] = {}
    if dm.formulation == PICEF:
        used = {key for key, name in dm.chain_vars.items() if on(name)}
        for n in g.ndds:
            path: List[int] = []
            starts = [e for e in g.ndd_out(n.id) if (e.id, 1) in used]
            if len(starts) > 1:
                raise DecodeError(f"ndd {n.id} starts {len(starts)} chains")
            if starts:
                e = starts[0]
                path.append(e.id)
                k = 1
                while True:
                    nxt = [x for x in g.pair_out(e.dst) if (x.id, k + 1) in used]
                    if len(nxt) > 1:
                        raise DecodeError(f"chain branches at pair {e.dst}")
                    if not nxt:
                        break
                    e, k = nxt[0], k + 1
                    path.append(e.id)
            chains[n.id] = tuple(path)
        n_used = sum(len(p) for p in chains.values())
        if n_used != len(used):
            raise DecodeError("chain edge variables not reachable from any NDD")
    else:
        used_e = {eid for eid, name in dm.y.items() if on(name)}
        seen = set()
        for n in g.ndds:
            path = []
            cur = [e for e in g.ndd_out(n.id) if e.id in used_e]
            if len(cur) > 1:
                raise DecodeError(f"ndd {n.id} starts {len(cur)} chains")
            while cur:
                if len(cur) > 1:
                    raise DecodeError(f"chain branches at pair {cur[0].src.id}")
                e = cur[0]
                if e.id in seen:
                    raise DecodeError("chain revisits an edge")
                seen.add(e.id)
                path.append(e.id)
                cur = [x for x in g.pair_out(e.dst) if x.id in used_e]
            chains[n.id] = tuple(path)
        if len(seen) != len(used_e):
            raise DecodeError("chain edges not reachable from any NDD (subtour)")
    match = Matching.build(g, cycles, chains)
    try:
        validate_matching(g, match, max([len(c) for c in dm.cycles], default=2), dm.chain_cap)
    except ValueError as exc:
        raise DecodeError(str(exc)) from None
    return match


def build_model(g: CompatibilityGraph, cycles: Sequence[Cycle], config: FormulationConfig):
    if config.formulation == PICEF:
        return build_picef(g, cycles, config.chain_cap)
    return build_pitsp(g, cycles, config.chain_cap, config.min_chain_len)


def clear(g: CompatibilityGraph, config: FormulationConfig = FormulationConfig(),
          cycles: Optional[Sequence[Cycle]] = None) -> Matching:
    """Maximum-weight matching under the configured formulation."""
    if cycles is None:
        cycles = enumerate_cycles(g, config.cycle_cap)
    model, dm = build_model(g, cycles, config)
    res = solve_mip(model, backend=config.backend)
    if res.status != OPTIMAL:
        raise InfeasibleError(f"{config.formulation} model is {res.status}")
    match = decode_matching(res, dm, g)
    if abs(match.nominal_score - res.objective) > 1e-6:
        raise DecodeError(f"decoded score {match.nominal_score} != objective {res.objective}")
    match.info.update(objective=res.objective, nodes=res.nodes, formulation=config.formulation)
    return match


# -- exhaustive oracles -------------------------------------------------------------


def _chains_from(g: CompatibilityGraph, ndd: int, L: int, free_mask: int,
                 min_len: int = 1) -> Iterator[Tuple[Tuple[int, ...], int, float]]:
    """Simple chains from ``ndd`` over free pairs: (edge ids, vertex mask, weight)."""
    out: List[Tuple[Tuple[int, ...], int, float]] = []

    def dfs(edges: Tuple[Edge, ...], mask: int, w: float, last: Optional[int]):
        nxt = g.ndd_out(ndd) if last is None else g.pair_out(last)
        for e in nxt:
            bit = 1 << e.dst
            if not (free_mask & bit) or (mask & bit):
                continue
            es = edges + (e,)
            if len(es) >= min_len:
                out.append((tuple(x.id for x in es), mask | bit, w + e.weight))
            if len(es) < L:
                dfs(es, mask | bit, w + e.weight, e.dst)

    if L >= 1:
        dfs((), 0, 0.0, None)
    return iter(out)


def enumerate_matchings(g: CompatibilityGraph, cycles: Sequence[Cycle], L: int,
                        min_chain_len: int = 0) -> Iterator[Matching]:
    """Every feasible matching (including the empty one). Exponential; test-sized graphs only."""
    cmask = [sum(1 << v for v in c.vertices) for c in cycles]
    full = (1 << g.n_pairs) - 1
    ndds = [n.id for n in g.ndds]

    def cycle_sets(start: int, free: int):
        yield ()
        for i in range(start, len(cycles)):
            if cmask[i] & ~free == 0:
                for rest in cycle_sets(i + 1, free & ~cmask[i]):
                    yield (cycles[i],) + rest

    def chain_sets(i: int, free: int):
        if i == len(ndds):
            yield {}, free
            return
        for rest, f in chain_sets(i + 1, free):
            yield rest, f
        for es, mask, _ in _chains_from(g, ndds[i], L, free, max(1, min_chain_len)):
            for rest, f in chain_sets(i + 1, free & ~mask):
                d = dict(rest)
                d[ndds[i]] = es
                yield d, f

    for chains, free in chain_sets(0, full):
        for cs in cycle_sets(0, free):
            yield Matching.build(g, cs, chains)


def brute_force_clear(g: CompatibilityGraph, K: int, L: int, min_chain_len: int = 0) -> Matching:
    """Exhaustive maximum-weight matching via memoised search over free-vertex sets."""
    cycles = enumerate_cycles(g, K)
    by_low: Dict[int, List[Tuple[int, Cycle]]] = {p.id: [] for p in g.pairs}
    for c in cycles:
        by_low[c.vertices[0]].append((sum(1 << v for v in c.vertices), c))
    ndds = [n.id for n in g.ndds]

    @lru_cache(maxsize=None)
    def pack(free: int) -> Tuple[float, Tuple[int, ...]]:
        if free == 0:
            return 0.0, ()
        low = (free & -free).bit_length() - 1
        best = pack(free & ~(1 << low))
        for mask, c in by_low[low]:
            if mask & ~free == 0:
                w, rest = pack(free & ~mask)
                if w + c.weight > best[0] + 1e-12:
                    best = (w + c.weight, (c.id,) + rest)
        return best

    @lru_cache(maxsize=None)
    def solve(free: int, i: int):
        if i == len(ndds):
            w, cs = pack(free)
            return w, cs, ()
        best = solve(free, i + 1)
        for es, mask, cw in _chains_from(g, ndds[i], L, free, max(1, min_chain_len)):
            w, cs, ch = solve(free & ~mask, i + 1)
            if w + cw > best[0] + 1e-12:
                best = (w + cw, cs, ((ndds[i], es),) + ch)
        return best

    _, cids, chains = solve((1 << g.n_pairs) - 1, 0)
    return Matching.build(g, [cycles[i] for i in cids], dict(chains))
