"""Acceptance criteria 1-10. Each test records one PASS/FAIL line, printed in the terminal summary."""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from robustkex.experiments import (EXISTENCE, NON_ROBUST, ROBUST, PolicyConfig, RealizationConfig,
                                   run_experiment)
from robustkex.fairness import (baselines, classify_sensitized, percent_fair, pof,
                                solve_weighted_fair)
from robustkex.instance import enumerate_cycles, generate_instance
from robustkex.matchopt import (PICEF, PITSP, FormulationConfig, brute_force_clear, clear,
                                enumerate_matchings)
from robustkex.milp import solve_lp_relaxation
from robustkex.robust_exist import solve_robust_existence, worst_case_existence
from robustkex.robust_weight import (_reduced_cost, bound_B, branch_and_price, budget_beta,
                                     build_robust_weight_model, cycle_price, edge_discounts,
                                     solve_robust_weight_constant, solve_robust_weight_variable,
                                     worst_case_weight)

from helpers import fragile_chain, random_graph, robust_cycle_price
from test_robust_exist import full_loss_minimum

TOL = 1e-6
RESULTS: list = []


def record(k: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def _instances(count, seed0, max_pairs, max_ndds, min_pairs=3, p_range=(0.15, 0.35), **kw):
    rng = np.random.default_rng(seed0)
    for i in range(count):
        n = int(rng.integers(min_pairs, max_pairs + 1))
        k = int(rng.integers(0, max_ndds + 1))
        p = float(rng.uniform(*p_range))
        yield random_graph(seed0 * 1000 + i, n, k, p=p, **kw)


def test_criterion_01_formulation_equivalence():
    t0 = time.perf_counter()
    bad = []
    for i, g in enumerate(_instances(200, 1, 12, 2, integer_weights=False)):
        ref = brute_force_clear(g, 3, 4).nominal_score
        a = clear(g, FormulationConfig(PICEF, 3, 4)).nominal_score
        b = clear(g, FormulationConfig(PITSP, 3, 4)).nominal_score
        if max(abs(a - ref), abs(b - ref)) > TOL:
            bad.append(i)
    dt = time.perf_counter() - t0
    ok = not bad and dt < 60
    record(1, ok, f"200 instances, mismatches={len(bad)}, runtime {dt:.1f}s (< 60s)")
    assert not bad
    assert dt < 60


def test_criterion_02_fragile_chain_regression():
    g = fragile_chain()
    det = clear(g, FormulationConfig(PITSP, 3, 5))
    r1 = solve_robust_existence(g, FormulationConfig(PITSP, 3, 5), 1)
    r0 = solve_robust_existence(g, FormulationConfig(PITSP, 3, 5), 0)
    checks = {
        "deterministic chain scores 5": det.nominal_score == 5 and det.chains[0] == (0, 1, 2, 3, 4),
        "gamma=1 picks the two 2-cycles": sorted(c.vertices for c in r1.cycles) == [(0, 3), (1, 4)]
        and not any(r1.chains.values()),
        "gamma=1 robust objective 2": r1.robust_score == 2,
        "gamma=0 reverts to the chain": r0.chains[0] == (0, 1, 2, 3, 4) and not r0.cycles,
    }
    ok = all(checks.values())
    record(2, ok, "; ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in checks.items()))
    assert ok, checks


def test_criterion_03_weight_robust_correctness():
    worst, count = 0.0, 0
    for g in _instances(100, 3, 10, 2):
        d = edge_discounts(g)
        mats = list(enumerate_matchings(g, enumerate_cycles(g, 3), 4))
        for gamma in (0, 0.5, 1, 2):
            got = solve_robust_weight_constant(g, FormulationConfig(PICEF, 3, 4), gamma).robust_score
            ref = max(worst_case_weight(m, d, gamma) for m in mats)
            worst = max(worst, abs(got - ref))
            count += 1
    ok = worst <= TOL
    record(3, ok, f"{count} solves, max |solver - oracle| = {worst:.2e}")
    assert ok


def test_criterion_04_existence_robust_correctness():
    worst, count, lemma_checked = 0.0, 0, 0
    lemma_worst = 0.0
    for g in _instances(100, 4, 10, 2, p_range=(0.12, 0.3)):
        mats = list(enumerate_matchings(g, enumerate_cycles(g, 3), 4))
        for gamma in (0, 1, 1.5, 2):
            got = solve_robust_existence(g, FormulationConfig(PITSP, 3, 4), gamma).robust_score
            ref = max(worst_case_existence(m, gamma) for m in mats)
            worst = max(worst, abs(got - ref))
            count += 1
        for m in mats[:50]:
            for gamma in (1, 2):
                lemma_worst = max(lemma_worst, abs(worst_case_existence(m, gamma)
                                                   - full_loss_minimum(m, g, gamma)))
                lemma_checked += 1
    ok = worst <= TOL and lemma_worst <= TOL
    record(4, ok, f"{count} solves, max |solver - oracle| = {worst:.2e}; "
                  f"{lemma_checked} failure-subset checks, max gap {lemma_worst:.2e}")
    assert ok


def _uniform_alpha(n, draws, seed):
    return np.random.default_rng(seed).uniform(-1, 1, size=(draws, n))


def test_criterion_05_probability_bound_as_stated():
    """Event sum(|alpha|) <= Gamma, exactly as the criterion words it."""
    failures = []
    for n in (4, 6, 8):
        alpha = _uniform_alpha(n, 100_000, n)
        s = np.abs(alpha).sum(axis=1)
        for gamma in range(1, n + 1):
            emp = float(np.mean(s <= gamma))
            need = 1 - bound_B(n, gamma) - 0.01
            if emp < need:
                failures.append(f"n={n},G={gamma}: {emp:.4f} < {need:.4f}")
    ok = not failures
    record(5, ok, f"{len(failures)} of 18 (n, Gamma) cells below 1-B-0.01"
                  + (f"; e.g. {failures[0]}" if failures else ""))
    assert ok, failures


def test_criterion_05_variant_signed_sum():
    """The same bound on the signed deviation sum(alpha) <= Gamma, the event the bound controls."""
    failures = []
    for n in (4, 6, 8):
        s = _uniform_alpha(n, 100_000, 100 + n).sum(axis=1)
        for gamma in range(1, n + 1):
            if float(np.mean(s <= gamma)) < 1 - bound_B(n, gamma) - 0.01:
                failures.append((n, gamma))
    RESULTS.append(f"criterion  5 (signed-sum variant): {'PASS' if not failures else 'FAIL'}  "
                   f"{len(failures)} of 18 cells below 1-B-0.01")
    assert not failures


def test_criterion_06_variable_budget():
    worst, count = 0.0, 0
    for g in _instances(50, 6, 10, 2):
        d = edge_discounts(g)
        mats = list(enumerate_matchings(g, enumerate_cycles(g, 3), 4))
        for eps in (0.1, 0.01):
            ref = max(worst_case_weight(m, d, budget_beta(m.num_edges(), eps) if m.num_edges() else 0.0)
                      for m in mats)
            got = solve_robust_weight_variable(g, FormulationConfig(PICEF, 3, 4), eps).robust_score
            worst = max(worst, abs(got - ref))
            count += 1
    ok = worst <= TOL
    record(6, ok, f"{count} solves, max |variable budget - exhaustive| = {worst:.2e}")
    assert ok


def test_criterion_07_pricing_soundness():
    cfg = FormulationConfig(PICEF, 3, 4)
    worst, omitted, lps, positive, lp_dual_only = 0.0, 0, 0, 0, 0
    for i, g in enumerate(_instances(50, 7, 10, 2, p_range=(0.2, 0.4))):
        gamma = (0.5, 1, 2)[i % 3]
        a = solve_robust_weight_constant(g, cfg, gamma).robust_score
        b = branch_and_price(g, cfg, gamma).robust_score
        worst = max(worst, abs(a - b))
        cycles = enumerate_cycles(g, 3)
        mats = list(enumerate_matchings(g, cycles, 4))
        rng = np.random.default_rng(i)
        # restricted masters: empty pool, a random half, and the full set
        for pool in ([], [c for c in cycles if rng.random() < 0.5], cycles):
            model, _ = build_robust_weight_model(g, pool, 4, gamma)
            lp = solve_lp_relaxation(model)
            lps += 1
            cap = {v.id: lp.duals.get(f"cap_{v.id}", 0.0) for v in g.pairs}
            priced = {c.id for c in cycle_price(g, lp, None, gamma, 3, cycles)}
            for c in cycles:
                true = robust_cycle_price(g, c, mats, cap, gamma)
                if true is not None and true > TOL:
                    positive += 1
                    omitted += c.id not in priced
                # informational: full LP reduced cost including the edge-link duals
                lp_dual_only += _reduced_cost(c, lp) > TOL and c.id not in priced
    ok = worst <= TOL and omitted == 0
    record(7, ok, f"50 instances, max |B&P - full| = {worst:.2e}; {lps} LPs, "
                  f"{positive} positive robust prices, omitted = {omitted}; "
                  f"positive only via edge-link duals (caught by the exact fallback) = {lp_dual_only}")
    assert worst <= TOL
    assert omitted == 0


def test_criterion_08_min_chain_length():
    checked, zero_gap, violations, above = 0, 0, 0, 0
    for seed in range(40):
        g = generate_instance(12, 2, seed)
        m = clear(g, FormulationConfig(PITSP, 3, 3, 3))
        free = brute_force_clear(g, 3, 3).nominal_score
        if not any(len(es) for es in brute_force_clear(g, 3, 3, 3).chains.values()):
            continue  # no 3-chain exists, so the floor is vacuous
        checked += 1
        violations += sum(1 for es in m.chains.values() if es and len(es) != 3)
        above += m.nominal_score > free + TOL
        zero_gap += abs(m.nominal_score - free) <= TOL
    ok = checked > 0 and violations == 0 and above == 0
    record(8, ok, f"{checked} instances with a feasible 3-chain, off-length chains={violations}, "
                  f"objective above unconstrained={above}; zero gap on {zero_gap}/{checked} (reported)")
    assert ok


def test_criterion_09_fairness_bounds():
    cfg = FormulationConfig(PICEF, 3, 4)
    pof_bad, pf_bad, pf_checked = 0, 0, 0
    for g in _instances(100, 9, 10, 2, cpra=True, integer_weights=False):
        part = classify_sensitized(g, 0.8)
        base = baselines(g, cfg, part)
        for gamma in (0.5, 1, 2):
            m = solve_weighted_fair(g, cfg, gamma, part=part)
            if base.utilitarian > 0 and pof(m, base.utilitarian) > gamma / (1 + gamma) + 1e-9:
                pof_bad += 1
            if base.max_uh > 0:
                bound = 1 - (base.max_ul / base.max_uh) / (1 + gamma)
                if bound >= 0:
                    pf_checked += 1
                    pf_bad += percent_fair(m, base.max_uh, part) < bound - 1e-9
    ok = pof_bad == 0 and pf_bad == 0
    record(9, ok, f"300 (instance, gamma) cases, POF violations={pof_bad}, "
                  f"%F violations={pf_bad} of {pf_checked} non-negative bounds")
    assert ok


def test_criterion_10_experiment_harness():
    policy = PolicyConfig(FormulationConfig(PITSP, 3, 4))
    rc = RealizationConfig(EXISTENCE, gamma_fail=1, trials=400, seed=2024)
    wins, used, seed = 0, 0, 0
    first_json = None
    while used < 20:
        g = generate_instance(10, 1, 10_000 + seed)
        seed += 1
        rep = run_experiment(g, policy, rc)
        if rep.skipped:
            continue
        if first_json is None:
            first_json = (g, rep.to_json(), rep.to_csv())
        used += 1
        wins += rep.summary[ROBUST]["std"] <= rep.summary[NON_ROBUST]["std"] + 1e-12
    again = run_experiment(first_json[0], policy, rc)
    reproducible = again.to_json() == first_json[1] and again.to_csv() == first_json[2]
    ok = wins >= 15 and reproducible
    record(10, ok, f"robust std <= non-robust std on {wins}/20 instances (need 15); "
                   f"byte-reproducible={reproducible}")
    assert wins >= 15
    assert reproducible
