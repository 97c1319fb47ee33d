import numpy as np
import pytest
import scipy.sparse as sp

from ce4lp.bilinear import BnbBudget
from ce4lp.errors import AssumptionViolated
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
from ce4lp.verify import verify_strong, verify_weak
from ce4lp.wcep_scep import (
    SearchBounds,
    build_scep,
    build_wcep,
    solve_scep,
    solve_wcep,
)
from ce4lp.lp import LinearProgram


def square_lp():
    """The unit diamond |x1| + |x2| <= 1 shifted into [0,2]^2, min -x1."""
    A = sp.csr_matrix(
        np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    )
    b = np.array([-3.0, -1.0, -1.0, 1.0])
    return LinearProgram(np.array([-1.0, 0.0]), A, b, np.array([2.0, 2.0]))


def square_query(favored=None):
    lp = square_lp()
    if favored is None:
        # shifted image of -0.5 <= x1 <= 0.5
        favored = FavoredSpace(((0, "+", 0.5),), caps={0: 1.5})
    mutable = MutableSpace(cost={0: Interval(-3, 3), 1: Interval(-3, 3)})
    return CeQuery(lp, np.array([2.0, 1.0]), favored, mutable)


def square_cost(direction):
    """Maximizing `direction` over the diamond, in the minimization convention."""
    return np.array([-direction[0], -direction[1]])


def openness_query():
    """One equality row a*x = a with a nominally zero and movable in [0,1].

    For every a > 0 the unique optimum is x = 1, inside the favored region;
    at a = 0 the row vanishes and the optimum drops to 0.  The attainable
    distances have infimum 0 but no minimum.
    """
    A = sp.csr_matrix((2, 1))
    lp = LinearProgram(np.array([1.0]), A, np.zeros(2), np.array([np.inf]))
    tie = TieGroup(
        (
            (("entry", 0, 0), 1.0),
            (("rhs", 0), 1.0),
            (("entry", 1, 0), -1.0),
            (("rhs", 1), -1.0),
        ),
        Interval(0.0, 1.0),
    )
    mutable = MutableSpace(ties=(tie,))
    favored = FavoredSpace(((0, "+", 1.0),))
    return CeQuery(lp, np.zeros(1), favored, mutable)


# ------------------------------------------------------------------ the square


def test_square_weak_region_classification():
    q = square_query()
    checked = 0
    for k in range(100):
        th = 2 * np.pi * k / 100 + 0.007
        d1, d2 = np.cos(th), np.sin(th)
        if abs(abs(d2) - abs(d1)) < 0.02:
            continue  # stay clear of the cone boundary
        expected = abs(d2) > abs(d1)
        c = q.lp.c.copy()
        c[:] = square_cost((1.5 * d1, 1.5 * d2))
        got = verify_weak(q, Params(c, q.lp.A.copy(), q.lp.b.copy())).passed
        assert got == expected, f"direction ({d1:.3f}, {d2:.3f})"
        checked += 1
    assert checked >= 90


def test_square_diagonal_weak_but_not_strong():
    q = square_query()
    diag = Params(square_cost((1.0, 1.0)), q.lp.A.copy(), q.lp.b.copy())
    assert verify_weak(q, diag).passed
    assert not verify_strong(q, diag).passed

    interior = Params(square_cost((0.3, 1.2)), q.lp.A.copy(), q.lp.b.copy())
    assert verify_weak(q, interior).passed
    assert verify_strong(q, interior).passed

    off = Params(square_cost((1.2, 0.3)), q.lp.A.copy(), q.lp.b.copy())
    assert not verify_weak(q, off).passed
    assert not verify_strong(q, off).passed


def test_square_weak_search_reaches_unit_distance():
    q = square_query()
    res = solve_wcep(q, budget=BnbBudget(max_nodes=3000, max_seconds=60))
    assert res.status in (CeStatus.PROVEN, CeStatus.INCUMBENT)
    assert res.candidate is not None
    assert res.verification.passed
    # nearest weak costs sit on the |c2| >= |c1| cone at l1 distance 1
    assert res.distance == pytest.approx(1.0, abs=2e-2)
    assert res.stats["bounded_search"] is True


def test_square_zero_change_shortcut():
    q = square_query(favored=FavoredSpace(((0, "+", 1.5),)))
    for solver in (solve_wcep, solve_scep):
        res = solver(q)
        assert res.status == CeStatus.PROVEN
        assert res.distance == 0.0
        assert res.stats.get("zero_change") is True


def test_square_unreachable_favored_with_frozen_rows():
    q = square_query(favored=FavoredSpace(((0, "+", 3.0),)))
    for solver in (solve_wcep, solve_scep):
        res = solver(q)
        assert res.status == CeStatus.INFEASIBLE
        assert res.candidate is None


# ------------------------------------------------------------------- openness


def test_openness_no_optimum_but_vanishing_lower_bound():
    q = openness_query()
    assert not verify_weak(q, Params.nominal(q.lp)).passed

    res = solve_wcep(q, budget=BnbBudget(max_nodes=1500, max_seconds=60))
    assert res.status != CeStatus.PROVEN
    assert res.candidate is not None
    assert res.verification.passed
    assert 0.0 < res.distance <= 0.1
    assert res.lower_bound is not None and res.lower_bound <= 1e-3
    # the accepted scalar is tiny but the induced optimum really moved to 1
    a = float(res.candidate.A[0, 0])
    assert 0.0 < a <= 0.1
    assert res.witness is not None
    assert res.witness[0] == pytest.approx(1.0, abs=1e-6)


# ----------------------------------------------------------------------- diet


def test_diet_weak_prices_match_published_change():
    q = diet_query("prices")
    res = solve_wcep(q, budget=BnbBudget(max_nodes=600, max_seconds=60))
    assert res.status in (CeStatus.PROVEN, CeStatus.INCUMBENT)
    assert res.verification.passed
    assert res.distance == pytest.approx(2545.0, abs=1.0)
    # both supplier-2 fat sources must tie the wheat price of 150 per fat unit
    assert res.candidate.c[3] == pytest.approx(150.0, abs=1e-3)
    assert res.candidate.c[4] == pytest.approx(75.0, abs=1e-3)
    assert res.lower_bound is not None and res.lower_bound <= res.distance + 1e-6


def test_diet_weak_wider_space_is_no_worse():
    qp = diet_query("prices")
    qn = diet_query("prices+nutrients")
    rp = solve_wcep(qp, budget=BnbBudget(max_nodes=150, max_seconds=60))
    rn = solve_wcep(qn, budget=BnbBudget(max_nodes=150, max_seconds=60))
    assert rp.verification.passed and rn.verification.passed
    assert rn.distance <= rp.distance + 1e-6


def test_diet_strong_prices_only_finds_nothing():
    q = diet_query("prices")
    res = solve_scep(q, budget=BnbBudget(max_nodes=250, max_seconds=120))
    assert res.candidate is None
    assert res.status in (CeStatus.BUDGET_EXHAUSTED, CeStatus.INFEASIBLE)


def test_diet_strong_nutrients_verified_and_dominates_weak():
    qn = diet_query("prices+nutrients")
    rw = solve_wcep(qn, budget=BnbBudget(max_nodes=150, max_seconds=60))
    rs = solve_scep(qn, budget=BnbBudget(max_nodes=150, max_seconds=120))
    assert rw.verification.passed
    assert rs.status in (CeStatus.PROVEN, CeStatus.INCUMBENT)
    assert rs.verification.passed
    assert verify_strong(qn, rs.candidate).passed
    assert rs.distance >= rw.distance - 1e-6


# ------------------------------------------------------------------ mechanics


def test_build_layout_and_products():
    q = diet_query("prices")
    bp, sys_w = build_wcep(q)
    # x (6) + prices (3) + bound duals (6) + row prices (3) + t (3)
    assert bp.q.size == 21
    assert len(bp.products) == 3  # each mutable price multiplies its x column
    assert bp.g.size == 3 + 2 + 6 + 1 + 2 * 3  # primal, favored, dual, gap, splits

    bs, sys_s = build_scep(q)
    r = 2  # two favored rows, no caps
    per_row = 1 + 6 + 3 + 6  # certificate rows per favored half-space
    assert bs.g.size == bp.g.size + r * per_row
    assert bs.q.size == 21 + r * (3 + 6 + 6 + 1)
    assert len(bs.products) > 3


def test_seed_vector_satisfies_linear_rows():
    q = diet_query("prices")
    bp, sys_ = build_wcep(q)
    c = q.lp.c.copy()
    c[3], c[4] = 150.0, 75.0
    p = Params(c, q.lp.A.copy(), q.lp.b.copy())
    v = sys_.vector_of(p)
    assert v is not None
    z = bp.product_values(v)
    assert bp.linear_violation(v, z) <= 1e-6 * (1 + np.abs(bp.g).max())
    back = sys_.params_of(v)
    assert np.allclose(back.c, c)


def test_guards_reject_unsupported_queries():
    q = diet_query("prices")
    bad_dist = CeQuery(
        q.lp, q.xhat, q.favored, q.mutable,
        dist=DistanceSpec("l1", "max"),
    )
    with pytest.raises(AssumptionViolated):
        solve_wcep(bad_dist)
    with pytest.raises(AssumptionViolated):
        build_scep(bad_dist)

    frozen = CeQuery(q.lp, q.xhat, q.favored, MutableSpace())
    with pytest.raises(AssumptionViolated):
        solve_wcep(frozen)


def test_search_bounds_double():
    b = SearchBounds()
    d = b.doubled()
    assert d.x_max == 2 * b.x_max
    assert d.y_max == 2 * b.y_max
    assert d.dual_max == 2 * b.dual_max
