"""Shared test oracles and instance builders (independent of the package internals)."""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np

from robustkex.instance import build_graph, load_instance

DATA = Path(__file__).parent / "data"
FRAGILE_CHAIN_ARCS = [("n0", 0), (0, 1), (1, 2), (2, 5), (5, 6), (0, 3), (3, 0), (1, 4), (4, 1)]


def fragile_chain():
    return load_instance(DATA / "fragile_chain.json")


def random_graph(seed, n_pairs=8, n_ndds=1, p=0.25, integer_weights=True, cpra=False):
    """Random digraph; weights in {1,2,3} (or uniform), discounts uniform in [0, w]."""
    rng = np.random.default_rng(seed)
    arcs = []
    srcs = list(range(n_pairs)) + [f"n{k}" for k in range(n_ndds)]
    for u in srcs:
        for v in range(n_pairs):
            if u != v and rng.random() < p:
                w = float(rng.integers(1, 4)) if integer_weights else float(rng.uniform(0.2, 2))
                arcs.append((u, v, w, float(rng.uniform(0, w))))
    cp = [float(x) for x in rng.choice([0.1, 0.5, 0.9], size=n_pairs)] if cpra else None
    return build_graph(n_pairs, arcs, ndds=n_ndds, cpra=cp)


def dense_simplex_max(c, A, b, max_iter=10_000):
    """Tableau simplex for max c·x, A x <= b, x >= 0 with b >= 0 (origin feasible).

    Bland's rule avoids cycling. Returns (objective, x).
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    m, n = A.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))
    for _ in range(max_iter):
        entering = next((j for j in range(n + m) if T[m, j] < -1e-12), None)
        if entering is None:
            break
        col = T[:m, entering]
        ratios = [(T[i, -1] / col[i], basis[i], i) for i in range(m) if col[i] > 1e-12]
        if not ratios:
            raise ValueError("unbounded")
        _, _, r = min(ratios)
        T[r] /= T[r, entering]
        for i in range(m + 1):
            if i != r:
                T[i] -= T[i, entering] * T[r]
        basis[r] = entering
    x = np.zeros(n + m)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    return float(T[m, -1]), x[:n]


def alpha_grid_min(weights, discounts, gamma, steps=20):
    """Minimum of sum(w - a*d) over a grid of a in [0,1]^n with sum(a) <= gamma."""
    best = float("inf")
    grid = np.linspace(0, 1, steps + 1)
    for a in itertools.product(grid, repeat=len(weights)):
        if sum(a) <= gamma + 1e-12:
            best = min(best, sum(w - ai * d for w, ai, d in zip(weights, a, discounts)))
    return best


def robust_cycle_price(g, c, mats, cap_duals, gamma):
    """Largest price of cycle ``c`` over matchings that use it, with edge weights as realized there.

    Within each matching the adversary charges discounts greedily by (discount desc, edge id):
    full for the first floor(gamma) edges, the fractional share for the next one. ``cap_duals``
    maps vertex -> capacity dual. Returns None when no matching contains ``c``.
    """
    fl = math.floor(gamma)
    frac = gamma - fl
    best = None
    for m in mats:
        if c.id not in {x.id for x in m.cycles}:
            continue
        ranked = sorted(m.edge_ids(), key=lambda e: (-g.edge(e).discount, e))
        charge = {e: (1.0 if r < fl else frac if r == fl else 0.0) * g.edge(e).discount
                  for r, e in enumerate(ranked)}
        heads = c.vertices[1:] + c.vertices[:1]
        price = sum(g.edge(e).weight - charge[e] - cap_duals.get(v, 0.0)
                    for v, e in zip(heads, c.edges))
        best = price if best is None else max(best, price)
    return best
