import numpy as np
import pytest
import scipy.sparse as sp

from ce4lp.bilinear import (
    BilinearProgram,
    BnbBudget,
    BnbStatus,
    mccormick_relax,
    product_boxes,
    solve_spatial_bnb,
)
from ce4lp.errors import DimensionMismatch, UnboundedOperand
from ce4lp.lp import solve

from oracles import bilinear_left_grid_oracle, random_bilinear_instance


def simple_bp(q, r, G, H, g, lo, hi, products):
    return BilinearProgram(
        np.array(q, dtype=float),
        np.array(r, dtype=float),
        sp.csr_matrix(np.array(G, dtype=float).reshape(len(g), len(q))),
        sp.csr_matrix(np.array(H, dtype=float).reshape(len(g), len(r))),
        np.array(g, dtype=float),
        np.array(lo, dtype=float),
        np.array(hi, dtype=float),
        tuple(products),
    )


def relax_value(bp, cost_override=None):
    lp = mccormick_relax(bp, bp.lo, bp.hi)
    if cost_override is not None:
        from ce4lp.lp import LinearProgram

        lp = LinearProgram(np.array(cost_override, dtype=float), lp.A, lp.b, lp.upper)
    sol = solve(lp)
    zlo, _ = product_boxes(bp, bp.lo, bp.hi)
    origin = float(np.concatenate([bp.lo, zlo]) @ np.asarray(cost_override if cost_override is not None else np.concatenate([bp.q, bp.r])))
    return sol, origin


def test_degenerate_box_pins_product():
    bp = simple_bp([0, 0], [1], [[0, 0]], [[0]], [-99], [1, 1], [1, 1], [(0, 1)])
    for sign in (1.0, -1.0):
        lp = mccormick_relax(bp, bp.lo, bp.hi)
        from ce4lp.lp import LinearProgram

        lp2 = LinearProgram(np.array([0.0, 0.0, sign]), lp.A, lp.b, lp.upper)
        sol = solve(lp2)
        zlo, _ = product_boxes(bp, bp.lo, bp.hi)
        assert sol.x[2] + zlo[0] == pytest.approx(1.0, abs=1e-9)


def test_envelope_range_at_box_center():
    # v in [-1,1]^2 pinned at the origin leaves z anywhere in [-1, 1]
    bp = simple_bp(
        [0, 0],
        [1],
        [[1, 0], [-1, 0], [0, 1], [0, -1]],
        [[0]] * 4,
        [0, 0, 0, 0],
        [-1, -1],
        [1, 1],
        [(0, 1)],
    )
    lp = mccormick_relax(bp, bp.lo, bp.hi)
    zlo, _ = product_boxes(bp, bp.lo, bp.hi)
    lo_sol = solve(lp)
    assert lo_sol.objective + zlo[0] == pytest.approx(-1.0, abs=1e-9)
    from ce4lp.lp import LinearProgram

    hi_sol = solve(LinearProgram(np.array([0.0, 0.0, -1.0]), lp.A, lp.b, lp.upper))
    assert -(hi_sol.objective) + zlo[0] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("corner", [(0, 0), (0, 3), (2, 0), (2, 3)])
def test_envelope_exact_at_corners(corner):
    vi, vj = corner
    bp = simple_bp(
        [0, 0],
        [1],
        [[1, 0], [-1, 0], [0, 1], [0, -1]],
        [[0]] * 4,
        [vi, -vi, vj, -vj],
        [0, 0],
        [2, 3],
        [(0, 1)],
    )
    lp = mccormick_relax(bp, bp.lo, bp.hi)
    zlo, _ = product_boxes(bp, bp.lo, bp.hi)
    lo_sol = solve(lp)
    from ce4lp.lp import LinearProgram

    hi_sol = solve(LinearProgram(np.array([0.0, 0.0, -1.0]), lp.A, lp.b, lp.upper))
    assert lo_sol.objective + zlo[0] == pytest.approx(vi * vj, abs=1e-9)
    assert -hi_sol.objective + zlo[0] == pytest.approx(vi * vj, abs=1e-9)


def test_unbounded_operand_rejected():
    with pytest.raises(UnboundedOperand):
        simple_bp([0, 0], [1], [[0, 0]], [[0]], [-1], [0, 0], [np.inf, 1], [(0, 1)])


def test_shape_validation():
    with pytest.raises(DimensionMismatch):
        BilinearProgram(
            np.zeros(2),
            np.zeros(2),  # two z columns but only one product declared
            sp.csr_matrix((1, 2)),
            sp.csr_matrix((1, 2)),
            np.array([-1.0]),
            np.zeros(2),
            np.ones(2),
            ((0, 1),),
        )
    with pytest.raises(DimensionMismatch):
        BilinearProgram(
            np.zeros(2),
            np.zeros(1),
            sp.csr_matrix((1, 2)),
            sp.csr_matrix((1, 1)),
            np.array([-1.0]),
            np.zeros(3),
            np.ones(3),
            ((0, 1),),
        )


def test_hyperbola_instance_proven():
    # minimize v0 subject to v0 * v1 = 1 with v1 capped at 1
    bp = simple_bp([1, 0], [0], [[0, 0], [0, 0]], [[1], [-1]], [1, -1], [0, 0], [2, 1], [(0, 1)])
    res = solve_spatial_bnb(bp, BnbBudget(max_seconds=30))
    assert res.status == BnbStatus.PROVEN
    assert res.objective == pytest.approx(1.0, abs=1e-5)
    assert res.incumbent[0] == pytest.approx(1.0, abs=1e-4)
    assert res.incumbent[1] == pytest.approx(1.0, abs=1e-4)
    oracle = bilinear_left_grid_oracle(bp)
    assert abs(res.objective - oracle) <= 5e-3
    trace = res.stats["trace"]
    assert np.all(np.diff(trace) >= -1e-9)


def test_product_free_reduces_to_lp():
    bp = BilinearProgram(
        np.array([1.0, 2.0]),
        np.zeros(0),
        sp.csr_matrix(np.array([[1.0, 1.0]])),
        sp.csr_matrix((1, 0)),
        np.array([2.0]),
        np.array([0.0, 0.0]),
        np.array([5.0, 5.0]),
        (),
    )
    res = solve_spatial_bnb(bp)
    assert res.status == BnbStatus.PROVEN
    assert res.objective == pytest.approx(2.0)
    assert res.node_count == 1


def test_infeasible_root():
    bp = simple_bp([1, 0], [0], [[1, 0]], [[0]], [5], [0, 0], [1, 1], [(0, 1)])
    res = solve_spatial_bnb(bp)
    assert res.status == BnbStatus.INFEASIBLE
    assert res.incumbent is None


def test_polish_hook_supplies_incumbent():
    bp = simple_bp([1, 0], [0], [[0, 0], [0, 0]], [[1], [-1]], [1, -1], [0, 0], [2, 1], [(0, 1)])
    seen = []

    def polish(v):
        seen.append(v.copy())
        return np.array([1.0, 1.0])

    res = solve_spatial_bnb(bp, BnbBudget(max_seconds=30), polish=polish)
    assert seen
    assert res.status == BnbStatus.PROVEN
    assert res.objective == pytest.approx(1.0, abs=1e-6)


def test_accept_veto_blocks_incumbents():
    bp = simple_bp([1, 0], [0], [[0, 0], [0, 0]], [[1], [-1]], [1, -1], [0, 0], [2, 1], [(0, 1)])
    res = solve_spatial_bnb(bp, BnbBudget(max_nodes=60, max_seconds=10), accept=lambda v: False)
    assert res.incumbent is None
    assert res.status == BnbStatus.BUDGET_EXHAUSTED


def test_queue_cap_eviction_keeps_invariants():
    bp = simple_bp(
        [1, 0, 0],
        [0, -0.3],
        [[0, 0, 0], [0, 0, 0]],
        [[1, 0], [-1, 0]],
        [1, -1],
        [0, 0, -1],
        [2, 1, 1],
        [(0, 1), (0, 2)],
    )
    res = solve_spatial_bnb(bp, BnbBudget(max_seconds=20, queue_cap=3, gap_tol=1e-9))
    assert res.status in (BnbStatus.PROVEN, BnbStatus.INCUMBENT)
    assert res.lower_bound <= res.objective + 1e-9
    oracle = bilinear_left_grid_oracle(bp)
    assert res.objective <= oracle + 5e-3


def test_random_library_vs_grid_oracle():
    rng = np.random.default_rng(77)
    done = 0
    while done < 20:
        bp = random_bilinear_instance(rng)
        res = solve_spatial_bnb(bp, BnbBudget(max_nodes=100_000, max_seconds=60))
        assert res.status == BnbStatus.PROVEN, f"instance {done}: {res.status}"
        assert res.gap <= 1e-4
        assert res.node_count <= 100_000
        oracle = bilinear_left_grid_oracle(bp)
        slack = 1e-6 * (1.0 + abs(res.objective)) + 1e-9
        assert res.objective <= oracle + 10 * slack, f"instance {done} beat by grid: {res.objective} vs {oracle}"
        assert abs(res.objective - oracle) <= 5e-3, f"instance {done}: {res.objective} vs {oracle}"
        trace = res.stats["trace"]
        assert np.all(np.diff(trace) >= -1e-9)
        # incumbent honesty, checked outside the search
        z = bp.product_values(res.incumbent)
        assert bp.linear_violation(res.incumbent, z) <= 1e-6
        assert np.all(res.incumbent >= bp.lo - 1e-9)
        assert np.all(res.incumbent <= bp.hi + 1e-9)
        done += 1
