import numpy as np
import pytest
import scipy.sparse as sp

from ce4lp.bilinear import BnbBudget
from ce4lp.errors import AssumptionViolated
from ce4lp.lp import LinearProgram, solve
from ce4lp.model import (
    CeQuery,
    CeStatus,
    DistanceSpec,
    FavoredSpace,
    Interval,
    MutableSpace,
    Params,
    TieGroup,
    diet_query,
    l1_change,
)
from ce4lp.rcep import (
    MAX_AGGREGATION,
    SCALED_BY_XHAT,
    SINGLE_COLUMN,
    X_WEIGHTED,
    TransformedPoint,
    recover_parameters,
    solve_rcep_bilinear,
    solve_rcep_bisect,
    solve_rcep_direct,
)

from oracles import grid_step_tolerance, random_small_query, rcep_xweighted_grid_oracle


def wheat_only_diet_query():
    q = diet_query("prices")
    wheat2 = q.lp.var_index("wheat@s2")
    return CeQuery(
        q.lp,
        q.xhat,
        q.favored,
        MutableSpace(cost={wheat2: q.mutable.cost[wheat2]}),
        alpha=1.0,
        dist=q.dist,
    )


def test_diet_single_column_bisect_hits_published_change():
    q = wheat_only_diet_query()
    res = solve_rcep_bisect(q, SINGLE_COLUMN)
    assert res.status == CeStatus.PROVEN
    assert res.objective == pytest.approx(470.9313, abs=1e-2)
    assert res.distance == pytest.approx(470.9313, abs=1e-2)
    assert res.verification.passed
    wheat2 = q.lp.var_index("wheat@s2")
    # published price move: 500.0 -> 29.1
    assert res.candidate.c[wheat2] == pytest.approx(29.0687, abs=1e-2)
    want = {"beans@s2": 1.0, "rice@s2": 2.5, "wheat@s2": 16.375}
    for name, val in want.items():
        assert res.witness[q.lp.var_index(name)] == pytest.approx(val, abs=1e-2)
    for name in ("beans@s1", "rice@s1", "wheat@s1"):
        assert abs(res.witness[q.lp.var_index(name)]) < 1e-2


def test_diet_bisect_all_columns_max_regime():
    q = diet_query("prices")
    res = solve_rcep_bisect(q, MAX_AGGREGATION)
    assert res.status == CeStatus.PROVEN
    # a single-column change bounds the max level from above
    assert res.stats["level"] <= 470.94
    assert res.verification.passed


def test_diet_direct_xweighted_consistent():
    q = diet_query("prices")
    res = solve_rcep_direct(q, X_WEIGHTED)
    assert res.status == CeStatus.PROVEN
    assert res.verification.passed
    # the reported objective equals the x-weighted distance recomputed by hand
    x = res.witness
    recomputed = 0.0
    for j in q.mutable.cost:
        recomputed += x[j] * abs(res.candidate.c[j] - q.lp.c[j])
    assert res.objective == pytest.approx(recomputed, abs=1e-6 * (1 + recomputed))
    assert res.distance >= res.objective / max(1.0, np.max(x)) - 1e-6


def test_diet_direct_scaled_consistent():
    q = diet_query("prices")
    res = solve_rcep_direct(q, SCALED_BY_XHAT)
    assert res.status == CeStatus.PROVEN
    assert res.verification.passed
    x = res.witness
    recomputed = 0.0
    for j in q.mutable.cost:
        recomputed += abs(res.candidate.c[j] * x[j] - q.lp.c[j] * q.xhat[j])
    assert res.objective == pytest.approx(recomputed, abs=1e-6 * (1 + recomputed))


def test_zero_change_under_loose_alpha():
    base = diet_query("prices")
    q = CeQuery(base.lp, base.xhat, base.favored, base.mutable, alpha=3.0, dist=base.dist)
    res = solve_rcep_direct(q, X_WEIGHTED)
    assert res.status == CeStatus.PROVEN
    assert res.objective == pytest.approx(0.0, abs=1e-7)
    assert res.distance == pytest.approx(0.0, abs=1e-6)
    assert l1_change(res.candidate, Params.nominal(q.lp)) < 1e-6


def test_guards_reject_structure_violations():
    base = diet_query("prices")
    tie = TieGroup(((("cost", 3), 1.0), (("cost", 4), -1.0)), Interval(-2000.0, 2000.0))
    tied_q = CeQuery(base.lp, base.xhat, base.favored, MutableSpace(ties=(tie,)))
    with pytest.raises(AssumptionViolated):
        solve_rcep_direct(tied_q, X_WEIGHTED)
    with pytest.raises(AssumptionViolated):
        solve_rcep_bisect(tied_q, MAX_AGGREGATION)
    unsafe_q = CeQuery(
        base.lp,
        base.xhat,
        base.favored,
        MutableSpace(cost=dict(base.mutable.cost), unsafe_columns=frozenset({3})),
    )
    with pytest.raises(AssumptionViolated):
        solve_rcep_direct(unsafe_q, X_WEIGHTED)
    with pytest.raises(AssumptionViolated):
        solve_rcep_bisect(base, SINGLE_COLUMN)  # three mutable columns
    with pytest.raises(AssumptionViolated):
        solve_rcep_direct(base, SINGLE_COLUMN)
    with pytest.raises(AssumptionViolated):
        solve_rcep_bisect(base, X_WEIGHTED)


def test_infeasible_favored_region():
    lp = LinearProgram(
        np.array([1.0, 1.0]),
        sp.csr_matrix(np.array([[1.0, 1.0]])),
        np.array([1.0]),
        np.array([5.0, 5.0]),
    )
    sol = solve(lp)
    fav = FavoredSpace(((0, "+", 10.0),))
    ms = MutableSpace(cost={0: Interval(0.0, 2.0)})
    q = CeQuery(lp, sol.x, fav, ms)
    assert solve_rcep_direct(q, X_WEIGHTED).status == CeStatus.INFEASIBLE
    assert solve_rcep_bisect(q, SINGLE_COLUMN).status == CeStatus.INFEASIBLE
    assert solve_rcep_bilinear(q, BnbBudget(max_seconds=5)).status == CeStatus.INFEASIBLE


def test_direct_matches_grid_oracle_on_small_queries():
    rng = np.random.default_rng(912)
    feasible = total = 0
    while feasible < 6 and total < 40:
        total += 1
        q = random_small_query(rng)
        res = solve_rcep_direct(q, X_WEIGHTED)
        assert res.status in (CeStatus.PROVEN, CeStatus.INFEASIBLE)
        oracle = rcep_xweighted_grid_oracle(q)
        if res.status == CeStatus.INFEASIBLE:
            assert oracle == np.inf
            continue
        assert res.verification.passed
        assert res.objective <= oracle + 1e-6
        assert oracle - res.objective <= grid_step_tolerance(q)
        feasible += 1
    assert feasible >= 6


def test_bisect_single_column_value_bounds_direct_candidates():
    rng = np.random.default_rng(34)
    checked = 0
    while checked < 12:
        q = random_small_query(rng, max_positions=1)
        bis = solve_rcep_bisect(q, SINGLE_COLUMN)
        direct = solve_rcep_direct(q, X_WEIGHTED)
        assert (bis.status == CeStatus.INFEASIBLE) == (direct.status == CeStatus.INFEASIBLE)
        if bis.status == CeStatus.INFEASIBLE:
            continue
        # the level is the least possible single-column deviation, hence a
        # lower bound on any candidate's unweighted distance
        assert bis.distance <= direct.distance + 1e-5
        assert bis.verification.passed and direct.verification.passed
        checked += 1
    assert checked >= 6


def test_rhs_only_query_both_paths():
    lp = LinearProgram(
        np.array([1.0, 1.0]),
        sp.csr_matrix(np.array([[1.0, 0.0]])),
        np.array([1.0]),
        np.array([5.0, 5.0]),
    )
    sol = solve(lp)
    fav = FavoredSpace(((0, "-", 0.2),))
    ms = MutableSpace(rhs={0: Interval(0.0, 1.0)})
    q = CeQuery(lp, sol.x, fav, ms, alpha=1.0)
    for res in (solve_rcep_direct(q, X_WEIGHTED), solve_rcep_bisect(q, SINGLE_COLUMN)):
        assert res.status == CeStatus.PROVEN
        assert res.candidate.b[0] == pytest.approx(0.2, abs=1e-6)
        assert res.distance == pytest.approx(0.8, abs=1e-6)
        assert res.verification.passed


def test_bilinear_diet_cross_check():
    q = diet_query("prices")
    res = solve_rcep_bilinear(q, BnbBudget(max_seconds=60, max_nodes=20000))
    assert res.status in (CeStatus.PROVEN, CeStatus.INCUMBENT)
    # the wheat-column change is globally optimal for the plain l1 sum
    assert res.distance <= 470.9313 + 1e-2
    assert res.verification.passed
    if res.status == CeStatus.PROVEN:
        assert res.distance == pytest.approx(470.9313, abs=1e-2)
    assert res.lower_bound <= res.distance + 1e-9


def test_bilinear_trivial_no_mutation_needed():
    lp = LinearProgram(
        np.array([1.0, 2.0]),
        sp.csr_matrix(np.array([[1.0, 1.0]])),
        np.array([2.0]),
        np.array([5.0, 5.0]),
    )
    sol = solve(lp)
    fav = FavoredSpace(((0, "+", 1.0),))  # xhat = (2, 0) already satisfies it
    ms = MutableSpace(cost={0: Interval(0.0, 2.0)})
    q = CeQuery(lp, sol.x, fav, ms, alpha=1.0)
    res = solve_rcep_bilinear(q, BnbBudget(max_seconds=20))
    assert res.status == CeStatus.PROVEN
    assert res.objective == pytest.approx(0.0, abs=1e-6)
    assert res.distance == pytest.approx(0.0, abs=1e-5)


def test_hyperbola_tied_parameters_via_bilinear():
    # rows a x >= 1 and -a x >= -1 pin a*x = 1; favored pushes x up, so the
    # tied coefficient must drop along the hyperbola
    lp = LinearProgram(
        np.array([1.0]),
        sp.csr_matrix(np.array([[1.0], [-1.0]])),
        np.array([1.0, -1.0]),
        np.array([2.0]),
    )
    sol = solve(lp)
    assert sol.x[0] == pytest.approx(1.0)
    tie = TieGroup(((("entry", 0, 0), 1.0), (("entry", 1, 0), -1.0)), Interval(0.5, 2.0))
    fav = FavoredSpace(((0, "+", 1.25),))
    q = CeQuery(lp, sol.x, fav, MutableSpace(ties=(tie,)), alpha=2.0)
    res = solve_rcep_bilinear(q, BnbBudget(max_seconds=30))
    assert res.status in (CeStatus.PROVEN, CeStatus.INCUMBENT)
    a = res.candidate.A[0, 0]
    x = res.witness[0]
    assert a * x == pytest.approx(1.0, abs=1e-4)
    assert res.candidate.A[1, 0] == pytest.approx(-a, abs=1e-9)
    assert x >= 1.25 - 1e-6
    assert res.verification.passed
    # two sign-mirrored entries move together: distance twice the scalar move
    assert res.distance == pytest.approx(2 * abs(a - 1.0), abs=1e-5)


def test_recover_parameters_by_hand():
    lp = LinearProgram(
        np.array([1.0, 1.0]),
        sp.csr_matrix(np.array([[1.0, 1.0]])),
        np.array([1.0]),
        np.array([5.0, 5.0]),
    )
    sol = solve(lp)
    q = CeQuery(
        lp,
        sol.x,
        FavoredSpace(),
        MutableSpace(cost={0: Interval(1.0, 4.0)}),
    )
    t = TransformedPoint(
        x=np.array([2.0, 0.0]),
        w=np.array([6.0, 0.0]),
        U=np.array([[2.0, 0.0]]),
        b=np.array([1.0]),
    )
    p = recover_parameters(t, q)
    assert p.c[0] == pytest.approx(3.0)
    # zero column keeps nominal data
    assert p.c[1] == lp.c[1]
