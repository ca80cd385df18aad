"""Compatibility graph model, JSON instance I/O, random generation and cycle enumeration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

BLOOD_TYPES = ("O", "A", "B", "AB")

# donor blood type -> patient blood types it can give to
ABO_COMPATIBLE = {
    "O": frozenset({"O", "A", "B", "AB"}),
    "A": frozenset({"A", "AB"}),
    "B": frozenset({"B", "AB"}),
    "AB": frozenset({"AB"}),
}

PAIR, NDD = "pair", "ndd"


class InstanceError(ValueError):
    """Malformed or inconsistent instance data."""


class VertexRef(NamedTuple):
    kind: str
    id: int

    def __str__(self) -> str:
        return f"{'p' if self.kind == PAIR else 'n'}{self.id}"


@dataclass(frozen=True)
class PairVertex:
    id: int
    cpra: float = 0.0
    bt_patient: str = "O"
    bt_donor: str = "O"


@dataclass(frozen=True)
class NddVertex:
    id: int
    bt_donor: str = "O"


@dataclass(frozen=True)
class Edge:
    id: int
    src: VertexRef
    dst: int
    weight: float = 1.0
    discount: float = 0.0

    @property
    def from_ndd(self) -> bool:
        return self.src.kind == NDD


@dataclass(frozen=True)
class Cycle:
    """Simple directed cycle through pair vertices, rotated so the smallest id is first."""

    id: int
    vertices: Tuple[int, ...]
    edges: Tuple[int, ...]
    weight: float

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class CompatibilityGraph:
    pairs: Tuple[PairVertex, ...] = ()
    ndds: Tuple[NddVertex, ...] = ()
    edges: Tuple[Edge, ...] = ()
    _out: Dict[VertexRef, Tuple[Edge, ...]] = field(default_factory=dict, compare=False, repr=False)
    _in: Dict[int, Tuple[Edge, ...]] = field(default_factory=dict, compare=False, repr=False)
    _by_id: Dict[int, Edge] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "ndds", tuple(self.ndds))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.id)))
        _validate(self)
        out: Dict[VertexRef, List[Edge]] = {VertexRef(PAIR, p.id): [] for p in self.pairs}
        out.update({VertexRef(NDD, n.id): [] for n in self.ndds})
        inn: Dict[int, List[Edge]] = {p.id: [] for p in self.pairs}
        for e in self.edges:
            out[e.src].append(e)
            inn[e.dst].append(e)
        object.__setattr__(self, "_out", {k: tuple(v) for k, v in out.items()})
        object.__setattr__(self, "_in", {k: tuple(v) for k, v in inn.items()})
        object.__setattr__(self, "_by_id", {e.id: e for e in self.edges})

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_ndds(self) -> int:
        return len(self.ndds)

    def out_edges(self, v: VertexRef) -> Tuple[Edge, ...]:
        return self._out[v]

    def pair_out(self, pid: int) -> Tuple[Edge, ...]:
        return self._out[VertexRef(PAIR, pid)]

    def ndd_out(self, nid: int) -> Tuple[Edge, ...]:
        return self._out[VertexRef(NDD, nid)]

    def in_edges(self, pid: int) -> Tuple[Edge, ...]:
        return self._in[pid]

    def edge(self, eid: int) -> Edge:
        return self._by_id[eid]

    def total_weight(self) -> float:
        return float(sum(e.weight for e in self.edges))

    def with_edge_values(self, weights: Mapping[int, float],
                         discounts: Optional[Mapping[int, float]] = None) -> "CompatibilityGraph":
        """Copy with replaced edge weights (and optionally discounts), keyed by edge id."""
        edges = []
        for e in self.edges:
            w = float(weights.get(e.id, e.weight))
            d = float(discounts.get(e.id, e.discount)) if discounts is not None else min(e.discount, w)
            edges.append(replace(e, weight=w, discount=d))
        return CompatibilityGraph(self.pairs, self.ndds, edges)


def _validate(g: CompatibilityGraph) -> None:
    for label, items in (("pair", g.pairs), ("ndd", g.ndds)):
        ids = sorted(v.id for v in items)
        if ids != list(range(len(ids))):
            raise InstanceError(f"{label} ids must be dense 0..{len(ids) - 1}, got {ids}")
    for p in g.pairs:
        if not 0.0 <= p.cpra <= 1.0:
            raise InstanceError(f"pair {p.id}: cpra {p.cpra} outside [0,1]")
        for bt in (p.bt_patient, p.bt_donor):
            if bt not in BLOOD_TYPES:
                raise InstanceError(f"pair {p.id}: unknown blood type {bt!r}")
    for n in g.ndds:
        if n.bt_donor not in BLOOD_TYPES:
            raise InstanceError(f"ndd {n.id}: unknown blood type {n.bt_donor!r}")
    seen_ids, seen_arcs = set(), set()
    for e in g.edges:
        where = f"edge {e.id}"
        if e.id in seen_ids:
            raise InstanceError(f"{where}: duplicate edge id")
        seen_ids.add(e.id)
        if e.src.kind == PAIR:
            if not 0 <= e.src.id < len(g.pairs):
                raise InstanceError(f"{where}: src pair {e.src.id} does not exist")
            if e.src.id == e.dst:
                raise InstanceError(f"{where}: self-loop on pair {e.dst}")
        elif e.src.kind == NDD:
            if not 0 <= e.src.id < len(g.ndds):
                raise InstanceError(f"{where}: src ndd {e.src.id} does not exist")
        else:
            raise InstanceError(f"{where}: unknown src kind {e.src.kind!r}")
        if not 0 <= e.dst < len(g.pairs):
            raise InstanceError(f"{where}: dst pair {e.dst} does not exist")
        if (e.src, e.dst) in seen_arcs:
            raise InstanceError(f"{where}: parallel edge {e.src}->p{e.dst}")
        seen_arcs.add((e.src, e.dst))
        if e.weight < 0:
            raise InstanceError(f"{where}: negative weight {e.weight}")
        if not 0.0 <= e.discount <= e.weight:
            raise InstanceError(f"{where}: discount {e.discount} outside [0, weight={e.weight}]")


# -- JSON ------------------------------------------------------------------------


def _field(obj: Mapping, key: str, where: str, kind=None, default=None, required=True):
    if key not in obj:
        if required:
            raise InstanceError(f"{where}: missing field {key!r}")
        return default
    val = obj[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise InstanceError(f"{where}.{key}: expected integer, got {val!r}")
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise InstanceError(f"{where}.{key}: expected number, got {val!r}")
        val = float(val)
    return val


def parse_instance(text) -> CompatibilityGraph:
    """Parse the UTF-8 JSON instance format into a validated graph."""
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InstanceError("top level must be a JSON object")
    for key in ("pairs", "ndds", "edges"):
        if not isinstance(doc.get(key, []), list):
            raise InstanceError(f"{key}: expected an array")

    pairs = []
    for i, p in enumerate(doc.get("pairs", [])):
        where = f"pairs[{i}]"
        pairs.append(PairVertex(
            id=_field(p, "id", where, int),
            cpra=_field(p, "cpra", where, float, 0.0, required=False),
            bt_patient=_field(p, "bt_patient", where, default="O", required=False),
            bt_donor=_field(p, "bt_donor", where, default="O", required=False),
        ))
    ndds = []
    for i, n in enumerate(doc.get("ndds", [])):
        where = f"ndds[{i}]"
        ndds.append(NddVertex(id=_field(n, "id", where, int),
                              bt_donor=_field(n, "bt_donor", where, default="O", required=False)))
    edges = []
    for i, e in enumerate(doc.get("edges", [])):
        where = f"edges[{i}]"
        src = _field(e, "src", where)
        if not isinstance(src, dict):
            raise InstanceError(f"{where}.src: expected object with kind/id")
        kind = _field(src, "kind", where + ".src")
        if kind not in (PAIR, NDD):
            raise InstanceError(f"{where}.src.kind: expected 'pair' or 'ndd', got {kind!r}")
        dst = e.get("dst")
        if isinstance(dst, dict):
            # tolerate {"kind":..,"id":..} but NDDs never receive
            if dst.get("kind") == NDD:
                raise InstanceError(f"{where}.dst: edges into NDDs are not allowed")
            dst = dst.get("id")
        if isinstance(dst, bool) or not isinstance(dst, int):
            raise InstanceError(f"{where}.dst: expected pair id integer, got {dst!r}")
        weight = _field(e, "weight", where, float, 1.0, required=False)
        edges.append(Edge(
            id=_field(e, "id", where, int),
            src=VertexRef(kind, _field(src, "id", where + ".src", int)),
            dst=dst,
            weight=weight,
            discount=_field(e, "discount", where, float, 0.0, required=False),
        ))
    return CompatibilityGraph(tuple(pairs), tuple(ndds), tuple(edges))


def instance_to_dict(g: CompatibilityGraph) -> dict:
    return {
        "pairs": [{"id": p.id, "cpra": p.cpra, "bt_patient": p.bt_patient, "bt_donor": p.bt_donor}
                  for p in sorted(g.pairs, key=lambda p: p.id)],
        "ndds": [{"id": n.id, "bt_donor": n.bt_donor} for n in sorted(g.ndds, key=lambda n: n.id)],
        "edges": [{"id": e.id, "src": {"kind": e.src.kind, "id": e.src.id}, "dst": e.dst,
                   "weight": e.weight, "discount": e.discount} for e in g.edges],
    }


def serialize_instance(g: CompatibilityGraph) -> str:
    """Canonical JSON: sorted keys and ids, so output is byte-stable."""
    return json.dumps(instance_to_dict(g), sort_keys=True, indent=1) + "\n"


def load_instance(path) -> CompatibilityGraph:
    with open(path, "rb") as fh:
        return parse_instance(fh.read())


def build_graph(n_pairs: int, arcs: Iterable[Tuple], ndds: int = 0,
                cpra: Optional[Sequence[float]] = None) -> CompatibilityGraph:
    """Convenience constructor from arc tuples.

    ``arcs`` items are ``(src, dst)`` or ``(src, dst, weight[, discount])``; ``src`` is a
    pair id or ``"n<k>"`` for NDD ``k``. Edge ids follow the given order.
    """
    edges = []
    for i, arc in enumerate(arcs):
        src, dst, *rest = arc
        if isinstance(src, str) and src.startswith("n"):
            ref = VertexRef(NDD, int(src[1:]))
        else:
            ref = VertexRef(PAIR, int(src))
        w = float(rest[0]) if rest else 1.0
        d = float(rest[1]) if len(rest) > 1 else 0.0
        edges.append(Edge(i, ref, int(dst), w, d))
    cp = list(cpra) if cpra is not None else [0.0] * n_pairs
    pairs = tuple(PairVertex(i, cp[i]) for i in range(n_pairs))
    return CompatibilityGraph(pairs, tuple(NddVertex(i) for i in range(ndds)), tuple(edges))


# -- generation -----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    bt_freq: Tuple[float, float, float, float] = (0.48, 0.34, 0.14, 0.04)
    cpra_levels: Tuple[float, ...] = (0.05, 0.45, 0.90)
    cpra_probs: Tuple[float, ...] = (0.7, 0.2, 0.1)


def generate_instance(n_pairs: int, n_ndds: int, seed: int,
                      config: GeneratorConfig = GeneratorConfig()) -> CompatibilityGraph:
    """Random pool: ABO compatibility plus a crossmatch draw against the recipient's CPRA.

    All edges get weight 1 and discount 0.
    """
    if n_pairs < 0 or n_ndds < 0:
        raise ValueError("counts must be non-negative")
    rng = np.random.default_rng(seed)
    bts = np.array(BLOOD_TYPES)
    pt = rng.choice(bts, size=n_pairs, p=config.bt_freq)
    dn = rng.choice(bts, size=n_pairs, p=config.bt_freq)
    cp = rng.choice(np.array(config.cpra_levels), size=n_pairs, p=config.cpra_probs)
    nd = rng.choice(bts, size=n_ndds, p=config.bt_freq)
    pairs = tuple(PairVertex(i, float(cp[i]), str(pt[i]), str(dn[i])) for i in range(n_pairs))
    ndds = tuple(NddVertex(i, str(nd[i])) for i in range(n_ndds))

    donors = [(VertexRef(NDD, n.id), n.bt_donor) for n in ndds]
    donors += [(VertexRef(PAIR, p.id), p.bt_donor) for p in pairs]
    edges = []
    for src, bt in donors:
        # one crossmatch draw per ordered (donor, patient) slot keeps the stream layout fixed
        draws = rng.uniform(size=n_pairs)
        for v in pairs:
            if src.kind == PAIR and src.id == v.id:
                continue
            if v.bt_patient in ABO_COMPATIBLE[bt] and draws[v.id] >= v.cpra:
                edges.append(Edge(len(edges), src, v.id, 1.0, 0.0))
    return CompatibilityGraph(pairs, ndds, tuple(edges))


# -- cycles -----------------------------------------------------------------------


def enumerate_cycles(g: CompatibilityGraph, cap: int) -> List[Cycle]:
    """All simple cycles among pair vertices with at most ``cap`` vertices.

    Each cycle starts at its smallest vertex; the list is sorted by vertex sequence and
    ``Cycle.id`` is the position in that list.
    """
    if cap < 2:
        raise ValueError("cycle cap must be at least 2")
    found: List[Tuple[Tuple[int, ...], Tuple[int, ...], float]] = []
    for start in range(g.n_pairs):
        path_v = [start]
        path_e: List[Edge] = []
        onpath = {start}

        def dfs(v: int) -> None:
            for e in g.pair_out(v):
                u = e.dst
                if u == start:
                    es = path_e + [e]
                    found.append((tuple(path_v), tuple(x.id for x in es),
                                  float(sum(x.weight for x in es))))
                elif u > start and u not in onpath and len(path_v) < cap:
                    path_v.append(u); path_e.append(e); onpath.add(u)
                    dfs(u)
                    path_v.pop(); path_e.pop(); onpath.discard(u)

        dfs(start)
    found.sort(key=lambda t: (t[0], t[1]))
    return [Cycle(i, vs, es, w) for i, (vs, es, w) in enumerate(found)]


def cycle_name(c: Cycle) -> str:
    return "_".join(map(str, c.vertices))
