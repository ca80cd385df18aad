"""Realization sampling, ΔOPT, and robust versus non-robust comparison."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm, rankdata

from .instance import CompatibilityGraph
from .matchopt import FormulationConfig, Matching, clear
from .robust_exist import solve_robust_existence
from .robust_weight import solve_robust_weight_constant, solve_robust_weight_variable

WEIGHT, EXISTENCE = "weight", "existence"
ROBUST, NON_ROBUST = "robust", "non_robust"
POLICIES = (ROBUST, NON_ROBUST)
NOMINAL_WEIGHT = 0.5
EXACT_MAX_N = 25

# spawn-key tags separating the label stream from per-trial streams
_TRIAL_STREAM, _LABEL_STREAM = 0, 1


@dataclass(frozen=True)
class RealizationConfig:
    mode: str = EXISTENCE
    alpha_frac: float = 0.5
    gamma_fail: int = 1
    trials: int = 400
    seed: int = 0
    bins: int = 40
    hist_range: Tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.mode not in (WEIGHT, EXISTENCE):
            raise ValueError(f"unknown realization mode {self.mode!r}")
        if not 0 <= self.alpha_frac <= 1:
            raise ValueError("alpha_frac must lie in [0, 1]")
        if self.gamma_fail < 0 or int(self.gamma_fail) != self.gamma_fail:
            raise ValueError("gamma_fail must be a non-negative integer")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")


@dataclass(frozen=True)
class PolicyConfig:
    """Robust policy: budget ``gamma`` or, in weight mode only, protection level ``epsilon``."""

    formulation: FormulationConfig = FormulationConfig()
    gamma: Optional[float] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.gamma is not None and self.epsilon is not None:
            raise ValueError("give at most one of gamma and epsilon")


@dataclass
class TrialReport:
    mode: str
    trials: int
    seed: int
    opt_score: float
    skipped: bool = False
    skip_reason: Optional[str] = None
    nominal: Dict[str, float] = field(default_factory=dict)
    realized: Dict[str, List[float]] = field(default_factory=dict)
    delta_opt: Dict[str, List[float]] = field(default_factory=dict)
    summary: Dict[str, Dict[str, float]] = field(default_factory=dict)
    bin_edges: List[float] = field(default_factory=list)
    hist_diff: List[float] = field(default_factory=list)
    wilcoxon_statistic: Optional[float] = None
    wilcoxon_p: Optional[float] = None
    matchings: Dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "policy", "realized_score", "delta_opt"])
        for t in range(len(self.realized.get(ROBUST, []))):
            for p in POLICIES:
                w.writerow([t, p, repr(self.realized[p][t]), repr(self.delta_opt[p][t])])
        return buf.getvalue()


# -- streams ---------------------------------------------------------------------------


def trial_rng(seed: int, trial: int, policy: int = 0) -> np.random.Generator:
    """Philox stream keyed by (seed, trial, policy): independent of execution order."""
    ss = np.random.SeedSequence(seed, spawn_key=(_TRIAL_STREAM, trial, policy))
    return np.random.Generator(np.random.Philox(ss))


def label_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_LABEL_STREAM,))))


# -- sampling --------------------------------------------------------------------------


def label_and_weight_edges(g: CompatibilityGraph, alpha_frac: float,
                           rng: np.random.Generator) -> Tuple[Dict[int, float], Dict[int, float]]:
    """Mark each edge probabilistic with probability ``alpha_frac``; returns (weights, discounts)."""
    if not 0 <= alpha_frac <= 1:
        raise ValueError("alpha_frac must lie in [0, 1]")
    ids = [e.id for e in g.edges]
    marks = rng.random(len(ids)) < alpha_frac
    weights = {eid: NOMINAL_WEIGHT for eid in ids}
    discounts = {eid: (NOMINAL_WEIGHT if p else 0.0) for eid, p in zip(ids, marks)}
    return weights, discounts


def sample_weight_realization(discounts: Mapping[int, float], rng: np.random.Generator) -> Dict[int, float]:
    """Probabilistic edges (positive discount) draw 0 or 1 with equal odds; the rest stay at 0.5."""
    ids = sorted(discounts)
    coins = rng.integers(0, 2, size=len(ids))
    return {eid: (float(c) if discounts[eid] > 0 else NOMINAL_WEIGHT) for eid, c in zip(ids, coins)}


def sample_existence_realization(m: Matching, gamma_fail: int, rng: np.random.Generator) -> FrozenSet[int]:
    """Exactly ``gamma_fail`` matched edges, uniformly at random (all of them if fewer)."""
    if gamma_fail < 0:
        raise ValueError("gamma_fail must be >= 0")
    ids = sorted(m.edge_ids())
    if gamma_fail >= len(ids):
        return frozenset(ids)
    pick = rng.choice(len(ids), size=int(gamma_fail), replace=False)
    return frozenset(ids[i] for i in pick)


Realization = Union[Mapping[int, float], FrozenSet[int]]


def realized_score(m: Matching, realization: Realization, g: Optional[CompatibilityGraph] = None) -> float:
    """Weight mode: realized weights summed. Existence mode: failed cycles score 0, chains keep
    the prefix before their first failed edge (``g`` supplies the weights)."""
    if isinstance(realization, Mapping):
        return float(sum(realization[e] for e in m.edge_ids()))
    if g is None:
        raise ValueError("existence realizations need the graph for edge weights")
    failed = realization
    total = 0.0
    for c in m.cycles:
        if not failed.intersection(c.edges):
            total += c.weight
    for _, es in sorted(m.chains.items()):
        for eid in es:
            if eid in failed:
                break
            total += g.edge(eid).weight
    return float(total)


def delta_opt(score: float, opt_score: float) -> float:
    if opt_score <= 0:
        raise ValueError("ΔOPT needs a positive optimum")
    return (opt_score - score) / opt_score


# -- statistics --------------------------------------------------------------------------


def _exact_upper_tail(ranks2: np.ndarray, w2: int) -> Tuple[float, float]:
    """P(W <= w) and P(W >= w) under random signs; ranks are doubled to stay integral."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    n_pat = 2 ** len(ranks2)
    lower = sum(counts[: w2 + 1])
    upper = sum(counts[w2:])
    return float(lower / n_pat), float(upper / n_pat)


def wilcoxon_signed_rank(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """Two-sided signed-rank test; returns (W+, p). Zero differences are dropped.

    Exact over all sign patterns up to 25 nonzero differences, normal approximation with
    continuity and tie correction beyond.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError("samples must have equal length")
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        lo, hi = _exact_upper_tail(2 * ranks, int(round(2 * w_plus)))
        return w_plus, min(1.0, 2 * min(lo, hi))
    mean = n * (n + 1) / 4
    _, ties = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(ties ** 3 - ties)) / 48
    if var <= 0:
        return w_plus, 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return w_plus, float(min(1.0, 2 * norm.sf(z)))


def histogram_difference(a: Sequence[float], b: Sequence[float], bins: int = 40,
                         hist_range: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Shared bin edges; per-bin mass fraction of ``a`` minus that of ``b``.

    Without ``hist_range`` the pooled sample range is used. Samples outside a given range
    are clipped into the end bins so both histograms keep unit mass.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    if hist_range is None:
        pooled = np.concatenate([a, b])
        lo, hi = float(pooled.min()), float(pooled.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = hist_range
    edges = np.linspace(lo, hi, bins + 1)
    ha, _ = np.histogram(np.clip(a, lo, hi), bins=edges)
    hb, _ = np.histogram(np.clip(b, lo, hi), bins=edges)
    return edges, ha / len(a) - hb / len(b)


def _summary(xs: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(xs, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "min": float(arr.min()),
            "max": float(arr.max())}


# -- harness -------------------------------------------------------------------------------


def _policies(g: CompatibilityGraph, policy: PolicyConfig,
              rc: RealizationConfig) -> Tuple[CompatibilityGraph, Matching, Matching]:
    """(graph used for scoring, M_R, M_NR); M_NR maximizes nominal weight."""
    cfg = policy.formulation
    if rc.mode == WEIGHT:
        weights, discounts = label_and_weight_edges(g, rc.alpha_frac, label_rng(rc.seed))
        g = g.with_edge_values(weights, discounts)
        nr = clear(g, cfg)
        if policy.epsilon is not None:
            r = solve_robust_weight_variable(g, cfg, policy.epsilon)
        else:
            r = solve_robust_weight_constant(g, cfg, policy.gamma if policy.gamma is not None else 1.0)
    else:
        if policy.epsilon is not None:
            raise ValueError("the existence policy takes a budget, not epsilon")
        nr = clear(g, cfg)
        gamma = policy.gamma if policy.gamma is not None else float(rc.gamma_fail)
        r = solve_robust_existence(g, cfg, gamma)
    return g, r, nr


def _run_trial(args) -> Tuple[float, float]:
    g, r, nr, rc, t = args
    if rc.mode == WEIGHT:
        real = sample_weight_realization({e.id: e.discount for e in g.edges}, trial_rng(rc.seed, t))
        return realized_score(r, real), realized_score(nr, real)
    out = []
    for k, m in enumerate((r, nr)):
        failed = sample_existence_realization(m, rc.gamma_fail, trial_rng(rc.seed, t, k))
        out.append(realized_score(m, failed, g))
    return out[0], out[1]


def run_experiment(g: CompatibilityGraph, policy: PolicyConfig = PolicyConfig(),
                   rc: RealizationConfig = RealizationConfig(), jobs: int = 1) -> TrialReport:
    """Draw ``rc.trials`` realizations and compare the robust and nominal-optimal matchings."""
    g, r, nr = _policies(g, policy, rc)
    opt = nr.nominal_score
    rep = TrialReport(rc.mode, rc.trials, rc.seed, opt)
    rep.nominal = {ROBUST: r.nominal_score, NON_ROBUST: nr.nominal_score}
    rep.matchings = {ROBUST: r.to_dict(), NON_ROBUST: nr.to_dict()}
    if opt <= 0:
        rep.skipped, rep.skip_reason = True, "empty optimal matching"
        return rep
    tasks = [(g, r, nr, rc, t) for t in range(rc.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scores = list(ex.map(_run_trial, tasks, chunksize=max(1, rc.trials // (4 * jobs))))
    else:
        scores = [_run_trial(a) for a in tasks]
    for i, p in enumerate(POLICIES):
        rep.realized[p] = [s[i] for s in scores]
        rep.delta_opt[p] = [delta_opt(s[i], opt) for s in scores]
        rep.summary[p] = _summary(rep.delta_opt[p])
    edges, diff = histogram_difference(rep.delta_opt[ROBUST], rep.delta_opt[NON_ROBUST],
                                       rc.bins, rc.hist_range)
    rep.bin_edges = [float(x) for x in edges]
    rep.hist_diff = [float(x) for x in diff]
    rep.wilcoxon_statistic, rep.wilcoxon_p = wilcoxon_signed_rank(rep.delta_opt[ROBUST],
                                                                  rep.delta_opt[NON_ROBUST])
    return rep
