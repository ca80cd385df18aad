import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustkex.instance import build_graph, enumerate_cycles
from robustkex.matchopt import (PICEF, PITSP, DecodeError, FormulationConfig, Matching,
                                brute_force_clear, build_picef, build_pitsp, clear,
                                decode_matching, enumerate_matchings, validate_matching)
from robustkex.milp import INFEASIBLE, OPTIMAL, SolveResult, solve_lp_relaxation, solve_mip

from helpers import fragile_chain, random_graph

FORMS = [PICEF, PITSP]


@pytest.mark.parametrize("kwargs", [
    dict(formulation="x"), dict(cycle_cap=1), dict(chain_cap=-1),
    dict(formulation=PITSP, chain_cap=2, min_chain_len=3), dict(min_chain_len=1),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FormulationConfig(**kwargs)


@pytest.mark.parametrize("form", FORMS)
def test_single_two_cycle_no_chains(form):
    g = build_graph(2, [(0, 1), (1, 0)])
    assert clear(g, FormulationConfig(form, 3, 0)).nominal_score == 2


@pytest.mark.parametrize("form", FORMS)
def test_no_cycles_no_ndds(form):
    g = build_graph(3, [(0, 1), (1, 2)])
    m = clear(g, FormulationConfig(form))
    assert m.nominal_score == 0 and m.is_empty()


@pytest.mark.parametrize("form", FORMS)
def test_fragile_chain_selects_five_chain(form):
    m = clear(fragile_chain(), FormulationConfig(form, 3, 5))
    assert m.nominal_score == 5
    assert m.chains == {0: (0, 1, 2, 3, 4)} and m.cycles == ()


@pytest.mark.parametrize("form", FORMS)
@pytest.mark.parametrize("L, expected", [(0, 4), (1, 4), (3, 4), (4, 4), (5, 5)])
def test_fragile_chain_chain_cap_sweep(form, L, expected):
    assert clear(fragile_chain(), FormulationConfig(form, 3, L)).nominal_score == expected
    assert brute_force_clear(fragile_chain(), 3, L).nominal_score == expected


def test_fragile_chain_min_chain_length():
    g = fragile_chain()
    m = clear(g, FormulationConfig(PITSP, 3, 5, 5))
    assert m.nominal_score == 5 and [len(c) for c in m.chains.values()] == [5]
    # a floor above the cap forbids every chain
    model, dm = build_pitsp(g, enumerate_cycles(g, 3), 5, 6)
    res = solve_mip(model)
    assert res.objective == pytest.approx(4)
    assert decode_matching(res, dm, g).chains[0] == ()
    assert brute_force_clear(g, 3, 5, 6).nominal_score == 4


def test_decode_all_zero():
    g = fragile_chain()
    model, dm = build_picef(g, enumerate_cycles(g, 3), 5)
    res = SolveResult(OPTIMAL, 0.0, np.zeros(model.num_vars), [v.name for v in model.variables])
    m = decode_matching(res, dm, g)
    assert m.is_empty() and m.nominal_score == 0


def test_decode_rejects_subtour():
    g = fragile_chain()
    model, dm = build_pitsp(g, enumerate_cycles(g, 3), 5)
    x = np.zeros(model.num_vars)
    names = [v.name for v in model.variables]
    for eid in (5, 6):  # the 0 <-> 3 cycle as chain edges
        x[names.index(dm.y[eid])] = 1
    with pytest.raises(DecodeError):
        decode_matching(SolveResult(OPTIMAL, 0.0, x, names), dm, g)


@pytest.mark.parametrize("cycle", [(5, 6), (7, 8)])
def test_pitsp_excludes_ndd_less_subtours(cycle):
    g = fragile_chain()
    model, _ = build_pitsp(g, enumerate_cycles(g, 3), 5)
    lb, ub = model.bounds()
    for eid in cycle:
        j = model.var(f"y_{eid}").index
        lb[j] = ub[j] = 1.0
    assert solve_lp_relaxation(model, lb, ub).status == INFEASIBLE


def test_pitsp_ndd_less_subtour_on_three_cycle():
    # a 3-cycle usable only as chain edges when K=2 excludes it from the cycle set
    g = build_graph(3, [("n0", 0), (0, 1), (1, 2), (2, 0)], ndds=1)
    model, _ = build_pitsp(g, enumerate_cycles(g, 2), 4)
    lb, ub = model.bounds()
    for eid in (1, 2, 3):
        j = model.var(f"y_{eid}").index
        lb[j] = ub[j] = 1.0
    assert solve_lp_relaxation(model, lb, ub).status == INFEASIBLE


def test_brute_force_trivia():
    assert brute_force_clear(build_graph(0, []), 3, 4).nominal_score == 0
    assert brute_force_clear(build_graph(2, [(0, 1)]), 3, 4).nominal_score == 0


def test_fragile_chain_matching_count():
    g = fragile_chain()
    mats = list(enumerate_matchings(g, enumerate_cycles(g, 3), 5))
    assert len({(tuple(c.id for c in m.cycles), tuple(sorted(m.chains.items()))) for m in mats}) == len(mats)
    assert max(m.nominal_score for m in mats) == 5


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(2, 8), st.integers(0, 2), st.integers(0, 4))
def test_formulations_agree_with_oracle(seed, n, k, L):
    g = random_graph(seed, n, k, p=0.3, integer_weights=False)
    ref = brute_force_clear(g, 3, L).nominal_score
    for form in FORMS:
        m = clear(g, FormulationConfig(form, 3, L))
        validate_matching(g, m, 3, L)
        assert m.nominal_score == pytest.approx(ref, abs=1e-6)


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_min_chain_length_property(seed, lmin):
    g = random_graph(seed, 7, 2, p=0.35)
    m = clear(g, FormulationConfig(PITSP, 3, 4, lmin))
    assert all(len(c) == 0 or len(c) >= lmin for c in m.chains.values())
    assert m.nominal_score == pytest.approx(brute_force_clear(g, 3, 4, lmin).nominal_score)
    assert m.nominal_score <= clear(g, FormulationConfig(PITSP, 3, 4)).nominal_score + 1e-9


def test_validate_matching_rejects_overlap():
    g = fragile_chain()
    cyc = {c.vertices: c for c in enumerate_cycles(g, 3)}
    bad = Matching.build(g, [cyc[(0, 3)]], {0: (0,)})
    with pytest.raises(ValueError, match="twice"):
        validate_matching(g, bad, 3, 5)


def test_to_dict_shape():
    d = clear(fragile_chain(), FormulationConfig(PICEF, 3, 5)).to_dict()
    assert d == {"score": 5.0, "cycles": [], "chains": {"0": [0, 1, 2, 3, 4]}}


def test_highs_backend_agrees():
    g = random_graph(11, 9, 2)
    a = clear(g, FormulationConfig(PITSP, 3, 4, backend="highs"))
    b = clear(g, FormulationConfig(PICEF, 3, 4))
    assert a.nominal_score == pytest.approx(b.nominal_score)
