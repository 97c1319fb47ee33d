"""Parser, writer and canonicalization tests for MPS input."""

import numpy as np
import pytest

from ce4lp.errors import ParseError, UnsupportedFeature
from ce4lp.lp import LpStatus, solve
from ce4lp.mps import GeneralLp, parse_mps, to_canonical, write_mps

from oracles import enumerate_vertices

SIMPLE = """\
NAME          tiny
ROWS
 N  COST
 G  R1
 L  R2
 E  R3
COLUMNS
    X1        COST      1.0   R1   2.0
    X1        R2        1.0
    X2        COST      3.0   R1   1.0
    X2        R3        1.0
RHS
    RHS       R1        4.0   R2   5.0
    RHS       R3        1.5
BOUNDS
 UP BND       X1        8.0
ENDATA
"""


def test_parse_simple():
    g = parse_mps(SIMPLE)
    assert g.name == "tiny"
    assert g.minimize
    assert g.objective_name == "COST"
    assert g.row_names == ["R1", "R2", "R3"]
    assert g.row_senses == ["G", "L", "E"]
    assert g.col_names == ["X1", "X2"]
    assert g.obj_entries == {0: 1.0, 1: 3.0}
    assert g.entries[(0, 0)] == 2.0
    assert g.entries[(1, 0)] == 1.0
    assert g.rhs == {0: 4.0, 1: 5.0, 2: 1.5}
    assert g.col_bounds(0) == (0.0, 8.0)
    assert g.col_bounds(1) == (0.0, np.inf)


def test_duplicate_entries_are_summed():
    text = SIMPLE.replace("    X1        R2        1.0", "    X1        R2        1.0\n    X1        R2        0.5")
    g = parse_mps(text)
    assert g.entries[(1, 0)] == 1.5


def test_integer_marker_rejected():
    text = SIMPLE.replace(
        "COLUMNS",
        "COLUMNS\n    M1        'MARKER'                 'INTORG'",
    )
    with pytest.raises(UnsupportedFeature):
        parse_mps(text)


def test_bv_bound_rejected():
    text = SIMPLE.replace(" UP BND       X1        8.0", " BV BND       X1")
    with pytest.raises(UnsupportedFeature):
        parse_mps(text)


def test_missing_endata_rejected():
    with pytest.raises(ParseError):
        parse_mps(SIMPLE.replace("ENDATA\n", ""))


def test_unknown_row_rejected():
    with pytest.raises(ParseError):
        parse_mps(SIMPLE.replace("R1   2.0", "NOPE   2.0"))


def test_free_rows_are_ignored():
    text = SIMPLE.replace(" G  R1", " G  R1\n N  FREEBIE").replace(
        "    X1        R2        1.0", "    X1        R2        1.0\n    X1        FREEBIE   9.0"
    )
    g = parse_mps(text)
    assert "FREEBIE" not in g.row_names
    assert g.entries[(1, 0)] == 1.0


def test_canonical_form_of_simple():
    g = parse_mps(SIMPLE)
    lp, vm = to_canonical(g)
    # G row stays, L row flips, E row splits: 1 + 1 + 2 rows
    assert lp.num_rows == 4
    assert lp.num_vars == 2
    assert lp.upper[0] == 8.0
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    # x2 pinned at 1.5 by R3, then R1 needs 2 x1 >= 2.5
    assert sol.objective == pytest.approx(1.25 + 4.5)
    assert np.allclose(sol.x, [1.25, 1.5])
    assert vm.original_objective(sol.objective) == pytest.approx(5.75)


def test_ranges_semantics():
    # G row with rhs 4 and range 3: 4 <= ax <= 7
    text = SIMPLE.replace("BOUNDS", "RANGES\n    RNG       R1        3.0\nBOUNDS")
    g = parse_mps(text)
    assert g.row_interval(0) == (4.0, 7.0)
    # L row: b - |r| <= ax <= b
    g2 = parse_mps(text.replace("    RNG       R1        3.0", "    RNG       R2        -2.0"))
    assert g2.row_interval(1) == (3.0, 5.0)
    # E row with positive and negative range
    g3 = parse_mps(text.replace("    RNG       R1        3.0", "    RNG       R3        0.5"))
    assert g3.row_interval(2) == (1.5, 2.0)
    g4 = parse_mps(text.replace("    RNG       R1        3.0", "    RNG       R3        -0.5"))
    assert g4.row_interval(2) == (1.0, 1.5)


def test_range_row_becomes_two_sided():
    text = SIMPLE.replace("BOUNDS", "RANGES\n    RNG       R1        3.0\nBOUNDS")
    lp, _ = to_canonical(parse_mps(text))
    assert lp.num_rows == 5
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    activity = 2.0 * sol.x[0] + sol.x[1]
    assert 4.0 - 1e-9 <= activity <= 7.0 + 1e-9


def test_shifted_lower_bound():
    text = SIMPLE.replace("BOUNDS", "BOUNDS\n LO BND       X2        0.5")
    lp, vm = to_canonical(parse_mps(text))
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    x_orig = vm.to_original(sol.x)
    assert x_orig[1] >= 0.5 - 1e-12
    assert x_orig[1] == pytest.approx(1.5)  # still pinned by the equality
    # canonical objective omits the constant part; VariableMap restores it
    direct = 1.0 * x_orig[0] + 3.0 * x_orig[1]
    assert vm.original_objective(sol.objective) == pytest.approx(direct)


def test_free_variable_split():
    text = """\
NAME
ROWS
 N  OBJ
 G  R1
COLUMNS
    X1        OBJ       1.0   R1   1.0
RHS
    RHS       R1        -3.0
BOUNDS
 FR BND       X1
ENDATA
"""
    lp, vm = to_canonical(parse_mps(text))
    assert lp.num_vars == 2
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    assert vm.to_original(sol.x)[0] == pytest.approx(-3.0)
    assert vm.original_objective(sol.objective) == pytest.approx(-3.0)


def test_free_variable_with_finite_upper_gets_bound_row():
    text = """\
NAME
ROWS
 N  OBJ
 G  R1
COLUMNS
    X1        OBJ       -1.0  R1   1.0
RHS
    RHS       R1        -5.0
BOUNDS
 MI BND       X1
 UP BND       X1        2.0
ENDATA
"""
    lp, vm = to_canonical(parse_mps(text))
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    assert vm.to_original(sol.x)[0] == pytest.approx(2.0)


def test_negative_up_frees_lower_bound():
    text = """\
NAME
ROWS
 N  OBJ
 G  R1
COLUMNS
    X1        OBJ       1.0   R1   1.0
RHS
    RHS       R1        -9.0
BOUNDS
 UP BND       X1        -1.0
ENDATA
"""
    lp, vm = to_canonical(parse_mps(text))
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    assert vm.to_original(sol.x)[0] == pytest.approx(-9.0)


def test_maximize_sense():
    text = SIMPLE.replace("NAME          tiny", "NAME          tiny\nOBJSENSE\n    MAX")
    g = parse_mps(text)
    assert not g.minimize
    lp, vm = to_canonical(g)
    sol = solve(lp)
    assert sol.status == LpStatus.OPTIMAL
    # maximize x1 + 3 x2: x1 capped at 5 by R2, x2 pinned at 1.5
    assert vm.original_objective(sol.objective) == pytest.approx(5.0 + 4.5)


def test_objective_rhs_constant():
    text = SIMPLE.replace("    RHS       R3        1.5", "    RHS       R3        1.5\n    RHS       COST      2.0")
    lp, vm = to_canonical(parse_mps(text))
    sol = solve(lp)
    # MPS convention: rhs on the objective row is the negated constant term
    assert vm.original_objective(sol.objective) == pytest.approx(5.75 - 2.0)


def _random_general(rng) -> GeneralLp:
    g = GeneralLp(name="fuzz", objective_name="OBJ")
    m = int(rng.integers(1, 4))
    n = int(rng.integers(1, 4))
    g.row_names = [f"R{i}" for i in range(m)]
    g.row_senses = [str(rng.choice(["G", "L", "E"])) for _ in range(m)]
    g.col_names = [f"C{j}" for j in range(n)]
    for j in range(n):
        g.obj_entries[j] = float(rng.integers(-3, 4))
        for i in range(m):
            if rng.random() < 0.8:
                g.entries[(i, j)] = float(rng.integers(-3, 4))
    for i in range(m):
        g.rhs[i] = float(rng.integers(-3, 4))
        if rng.random() < 0.3:
            g.ranges[i] = float(rng.integers(-2, 3))
    for j in range(n):
        r = rng.random()
        if r < 0.25:
            g.lower[j] = float(rng.integers(-2, 1))
        elif r < 0.4:
            g.lower[j] = -np.inf
        if rng.random() < 0.5:
            lo = g.lower.get(j, 0.0)
            floor = int(lo) if np.isfinite(lo) else 0
            g.upper[j] = float(rng.integers(max(0, floor) + 1, 6))
    return g


def test_write_parse_round_trip():
    rng = np.random.default_rng(42)
    for _ in range(50):
        g = _random_general(rng)
        g2 = parse_mps(write_mps(g))
        assert g2.row_names == g.row_names
        assert g2.row_senses == g.row_senses
        assert g2.col_names == g.col_names
        for (i, j), v in g.entries.items():
            assert g2.entries.get((i, j), 0.0) == pytest.approx(v, abs=1e-9)
        for j, v in g.obj_entries.items():
            assert g2.obj_entries.get(j, 0.0) == pytest.approx(v, abs=1e-9)
        for i in range(g.num_rows):
            assert g2.rhs.get(i, 0.0) == pytest.approx(g.rhs.get(i, 0.0), abs=1e-9)
            lo, hi = g.row_interval(i)
            lo2, hi2 = g2.row_interval(i)
            assert lo2 == pytest.approx(lo, abs=1e-9) and hi2 == pytest.approx(hi, abs=1e-9)
        for j in range(g.num_cols):
            lo, up = g.col_bounds(j)
            lo2, up2 = g2.col_bounds(j)
            assert lo2 == pytest.approx(lo, abs=1e-9) and up2 == pytest.approx(up, abs=1e-9)


def test_canonicalization_preserves_feasible_set():
    """Canonical vertices map onto feasible points of the original rows and back."""
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(40):
        g = _random_general(rng)
        lp, vm = to_canonical(g)
        if lp.num_vars > 4:
            continue  # keep the enumeration cheap
        for v in enumerate_vertices(lp):
            x = vm.to_original(v)
            for i in range(g.num_rows):
                act = sum(val * x[j] for (ii, j), val in g.entries.items() if ii == i)
                lo, hi = g.row_interval(i)
                assert act >= lo - 1e-7 and act <= hi + 1e-7
            for j in range(g.num_cols):
                lo, up = g.col_bounds(j)
                assert lo - 1e-9 <= x[j] <= up + 1e-9
            checked += 1
    assert checked > 20


def test_canonical_optimum_matches_original_semantics():
    """Solve canonical, map back, compare against direct enumeration of the original."""
    rng = np.random.default_rng(11)
    agreements = 0
    for _ in range(60):
        g = _random_general(rng)
        # force boxed variables so both sides are compact
        for j in range(g.num_cols):
            lo = g.lower.get(j, 0.0)
            if not np.isfinite(lo):
                g.lower[j] = -3.0
            g.upper[j] = g.lower.get(j, 0.0) + float(rng.integers(1, 5))
        lp, vm = to_canonical(g)
        sol = solve(lp)
        best = _enumerate_original_minimum(g)
        if best is None:
            assert sol.status == LpStatus.INFEASIBLE
        else:
            assert sol.status == LpStatus.OPTIMAL
            assert vm.original_objective(sol.objective) == pytest.approx(best, rel=1e-7, abs=1e-7)
            agreements += 1
    assert agreements > 20


def _enumerate_original_minimum(g: GeneralLp):
    """Brute-force the original row/bound system on a vertex grid."""
    from itertools import combinations

    n = g.num_cols
    planes = []
    for i in range(g.num_rows):
        a = np.zeros(n)
        for (ii, j), v in g.entries.items():
            if ii == i:
                a[j] = v
        lo, hi = g.row_interval(i)
        if np.isfinite(lo):
            planes.append((a, lo))
        if np.isfinite(hi):
            planes.append((a.copy(), hi))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        lo, up = g.col_bounds(j)
        planes.append((e, lo))
        planes.append((e.copy(), up))
    c = np.zeros(n)
    for j, v in g.obj_entries.items():
        c[j] = v
    sign = 1.0 if g.minimize else -1.0
    best = None
    for comb in combinations(range(len(planes)), n):
        M = np.array([planes[i][0] for i in comb])
        rhs = np.array([planes[i][1] for i in comb])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs)
        ok = True
        for i in range(g.num_rows):
            act = sum(v * x[j] for (ii, j), v in g.entries.items() if ii == i)
            lo, hi = g.row_interval(i)
            if act < lo - 1e-7 or act > hi + 1e-7:
                ok = False
                break
        if ok:
            for j in range(n):
                lo, up = g.col_bounds(j)
                if x[j] < lo - 1e-9 or x[j] > up + 1e-9:
                    ok = False
                    break
        if ok:
            val = sign * float(c @ x)
            if best is None or val < best:
                best = val
    if best is None:
        return None
    # `best` is the canonical (sign-adjusted) minimum; map back to original sense
    return best if g.minimize else -best


def test_parse_from_file(tmp_path):
    p = tmp_path / "toy.mps"
    p.write_text(SIMPLE)
    g = parse_mps(str(p))
    assert g.name == "tiny"
