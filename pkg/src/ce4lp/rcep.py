"""Relative explanations: make the favored region affordable.

A relative explanation is a parameter tuple in H under which some favored
point is feasible and costs at most alpha times the present optimal value.
The product terms c_j x_j and a_ij x_j are replaced by per-column variables
(w_j, U_j) constrained to x_j-scaled boxes, which turns the search into a
single LP for the x-weighted and scaled objectives, a bisection for the
single-column and max objectives, and a box-bounded bilinear program for
the exact unweighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .bilinear import BilinearProgram, BnbBudget, BnbStatus, solve_spatial_bnb
from .errors import AssumptionViolated, NumericalFailure
from .lp import LinearProgram, LpStatus, solve
from .model import CeKind, CeQuery, CeResult, CeStatus, Params, l1_change
from .verify import verify_relative

X_WEIGHTED = "x_weighted"
SCALED_BY_XHAT = "scaled_by_xhat"
SINGLE_COLUMN = "single_column"
MAX_AGGREGATION = "max"

ZERO_X = 1e-9


@dataclass
class TransformedPoint:
    """Products replaced by their own coordinates: w_j = c_j x_j, U_j = A_j x_j."""

    x: np.ndarray
    w: np.ndarray
    U: np.ndarray
    b: np.ndarray


def _check_columnwise(q: CeQuery):
    if q.mutable.ties:
        raise AssumptionViolated("tied parameters break the columnwise box structure")
    bad = set(q.mutable.mutable_columns()) & set(q.mutable.unsafe_columns)
    if bad:
        raise AssumptionViolated(
            f"columns {sorted(bad)} are not known to live in x >= 0; the scaled-box "
            "membership argument needs a nonnegative domain"
        )
    if q.vhat < -1e-9 and q.alpha != 0:
        raise AssumptionViolated("relative budgets need a nonnegative present value")


def _favored_rows(q: CeQuery):
    poly = q.favored_polyhedron()
    return poly.W.tocsr(), poly.h


class _TransformedModel:
    """Shared LP assembly over (x, shifted w, shifted U, shifted b, extras).

    Shifted coordinates keep everything nonnegative: wt = w - lo*x >= 0 with
    wt <= (hi-lo)*x, and likewise for entries; mutable rhs shifts by its lo.
    """

    def __init__(self, q: CeQuery):
        _check_columnwise(q)
        self.q = q
        lp = q.lp
        self.n = lp.num_vars
        self.m = lp.num_rows
        self.cost_pos = sorted(q.mutable.cost)
        self.entry_pos = sorted(q.mutable.entries)
        self.rhs_pos = sorted(q.mutable.rhs)
        self.wt = {}
        self.ut = {}
        self.bt = {}
        idx = self.n
        for j in self.cost_pos:
            self.wt[j] = idx
            idx += 1
        for key in self.entry_pos:
            self.ut[key] = idx
            idx += 1
        for i in self.rhs_pos:
            self.bt[i] = idx
            idx += 1
        self.base_vars = idx
        self.A_dense = lp.A.tocsc()

    def param_interval(self, key):
        ms = self.q.mutable
        if key[0] == "cost":
            return ms.cost[key[1]]
        if key[0] == "entry":
            return ms.entries[(key[1], key[2])]
        return ms.rhs[key[1]]

    def nominal_value(self, key):
        lp = self.q.lp
        if key[0] == "cost":
            return float(lp.c[key[1]])
        if key[0] == "entry":
            return float(self.A_dense[key[1], key[2]])
        return float(lp.b[key[1]])

    def base_rows(self, extra_vars: int = 0):
        """Budget, demand, favored and membership rows over the variable block."""
        q, lp = self.q, self.q.lp
        width = self.base_vars + extra_vars
        rows, rhs = [], []

        # budget: sum_j w_j + sum_nonmutable c_j x_j <= alpha * vhat
        data, cols = [], []
        for j in range(self.n):
            if j in self.wt:
                iv = q.mutable.cost[j]
                data.append(-iv.lo)
                cols.append(j)
                data.append(-1.0)
                cols.append(self.wt[j])
            else:
                data.append(-lp.c[j])
                cols.append(j)
        rows.append((data, cols))
        rhs.append(-q.alpha * q.vhat)

        # demand rows: sum_j u_ij >= b_i
        by_row = {}
        coo = lp.A.tocoo()
        for i, j, v in zip(coo.row, coo.col, coo.data):
            by_row.setdefault(int(i), []).append((int(j), float(v)))
        for i in range(self.m):
            data, cols = [], []
            for j, v in by_row.get(i, []):
                if (i, j) in self.ut:
                    iv = q.mutable.entries[(i, j)]
                    data.append(iv.lo)
                    cols.append(j)
                    data.append(1.0)
                    cols.append(self.ut[(i, j)])
                else:
                    data.append(v)
                    cols.append(j)
            # mutable entries at structurally zero nominal positions
            for (ii, j), iv in q.mutable.entries.items():
                if ii == i and all(j != jj for jj, _ in by_row.get(i, [])):
                    data.append(iv.lo)
                    cols.append(j)
                    data.append(1.0)
                    cols.append(self.ut[(i, j)])
            if i in self.bt:
                iv = q.mutable.rhs[i]
                data.append(-1.0)
                cols.append(self.bt[i])
                rhs.append(iv.lo)
            else:
                rhs.append(float(lp.b[i]))
            rows.append((data, cols))

        # favored region
        W, h = _favored_rows(q)
        wc = W.tocoo()
        fav = {}
        for r, j, v in zip(wc.row, wc.col, wc.data):
            fav.setdefault(int(r), []).append((int(j), -float(v)))
        for r in range(W.shape[0]):
            data, cols = [], []
            for j, v in fav.get(r, []):
                data.append(v)
                cols.append(j)
            rows.append((data, cols))
            rhs.append(-float(h[r]))

        # membership caps: wt <= (hi-lo) x_j, ut <= (hi-lo) x_j
        for j in self.cost_pos:
            iv = q.mutable.cost[j]
            rows.append(([iv.width, -1.0], [j, self.wt[j]]))
            rhs.append(0.0)
        for (i, j) in self.entry_pos:
            iv = q.mutable.entries[(i, j)]
            rows.append(([iv.width, -1.0], [j, self.ut[(i, j)]]))
            rhs.append(0.0)
        return rows, rhs, width

    def assemble(self, rows, rhs, cost, upper):
        data, ri, ci = [], [], []
        for r, (dat, cols) in enumerate(rows):
            for d, cc in zip(dat, cols):
                if d != 0.0:
                    data.append(d)
                    ri.append(r)
                    ci.append(cc)
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), cost.size))
        return LinearProgram(cost, A, np.asarray(rhs, dtype=float), upper)

    def positions(self):
        out = [("cost", j) for j in self.cost_pos]
        out += [("entry", i, j) for (i, j) in self.entry_pos]
        return out

    def var_of(self, key):
        return self.wt[key[1]] if key[0] == "cost" else self.ut[(key[1], key[2])]

    def column_of(self, key):
        return key[1] if key[0] == "cost" else key[2]

    def default_upper(self, width: int):
        upper = np.full(width, np.inf)
        upper[: self.n] = self.q.lp.upper
        for i in self.rhs_pos:
            upper[self.bt[i]] = self.q.mutable.rhs[i].width
        return upper

    def recover(self, xsol: np.ndarray) -> tuple:
        """Parameters and transformed point from an LP solution vector."""
        q, lp = self.q, self.q.lp
        x = xsol[: self.n].copy()
        c = lp.c.copy()
        A = lp.A.tolil(copy=True)
        b = lp.b.copy()
        w = c * x
        U = lp.A.toarray() * x[None, :]
        for j in self.cost_pos:
            iv = q.mutable.cost[j]
            wv = xsol[self.wt[j]] + iv.lo * x[j]
            w[j] = wv
            c[j] = iv.clamp(wv / x[j]) if x[j] > ZERO_X else lp.c[j]
        for (i, j) in self.entry_pos:
            iv = q.mutable.entries[(i, j)]
            uv = xsol[self.ut[(i, j)]] + iv.lo * x[j]
            U[i, j] = uv
            A[i, j] = iv.clamp(uv / x[j]) if x[j] > ZERO_X else self.A_dense[i, j]
        for i in self.rhs_pos:
            iv = q.mutable.rhs[i]
            b[i] = xsol[self.bt[i]] + iv.lo
        params = Params(c, A.tocsr(), b)
        return params, TransformedPoint(x, w, U, b)


def recover_parameters(t: TransformedPoint, q: CeQuery) -> Params:
    """Divide the product coordinates back out; zero columns keep nominal data."""
    lp = q.lp
    c = lp.c.copy()
    A = lp.A.tolil(copy=True)
    for j in q.mutable.cost:
        if t.x[j] > ZERO_X:
            c[j] = q.mutable.cost[j].clamp(t.w[j] / t.x[j])
    for (i, j), iv in q.mutable.entries.items():
        if t.x[j] > ZERO_X:
            A[i, j] = iv.clamp(t.U[i, j] / t.x[j])
    return Params(c, A.tocsr(), t.b.copy())


def _abs_split(model, rows, rhs, key, tcol, scale_nominal):
    """Rows making t >= |value - reference| for a shifted product variable.

    reference is nominal * x_j when scale_nominal, else nominal * xhat_j
    (a plain constant).  value = var + lo * x_j in original coordinates.
    """
    iv = model.param_interval(key)
    nom = model.nominal_value(key)
    var = model.var_of(key)
    j = model.column_of(key)
    if scale_nominal:
        # t - (var + lo x) + nom x >= 0  and  t + (var + lo x) - nom x >= 0
        rows.append(([1.0, -1.0, nom - iv.lo], [tcol, var, j]))
        rhs.append(0.0)
        rows.append(([1.0, 1.0, iv.lo - nom], [tcol, var, j]))
        rhs.append(0.0)
    else:
        ref = nom * model.q.xhat[j]
        rows.append(([1.0, -1.0, -iv.lo], [tcol, var, j]))
        rhs.append(-ref)
        rows.append(([1.0, 1.0, iv.lo], [tcol, var, j]))
        rhs.append(ref)


def _rhs_abs_split(model, rows, rhs, i, tcol):
    iv = model.q.mutable.rhs[i]
    nom = model.nominal_value(("rhs", i))
    var = model.bt[i]
    # b = var + lo; t >= |b - nominal|
    rows.append(([1.0, -1.0], [tcol, var]))
    rhs.append(iv.lo - nom)
    rows.append(([1.0, 1.0], [tcol, var]))
    rhs.append(nom - iv.lo)


def _finish(q: CeQuery, status: CeStatus, params: Optional[Params], witness, objective, extra=None):
    res = CeResult(status=status, kind=CeKind.RELATIVE)
    if params is not None:
        res.candidate = params
        res.witness = witness
        res.distance = l1_change(params, Params.nominal(q.lp))
        res.objective = objective
        res.verification = verify_relative(q, params)
    res.stats = extra or {}
    return res


def _sparsest_among_optimal(model: "_TransformedModel", x: np.ndarray, zstar: float) -> Optional[Params]:
    """Cheapest unweighted parameter change keeping the witness and the optimum.

    The x-weighted LP can park on a degenerate optimal face and report
    movement in parameters the witness never needed.  With x fixed the
    parameters enter every condition linearly, so one more small LP picks,
    among tuples of the same weighted cost, the one of least l1 change.
    """
    q, lp = model.q, model.q.lp
    keys = [("cost", j) for j in model.cost_pos]
    keys += [("entry", i, j) for (i, j) in model.entry_pos]
    keys += [("rhs", i) for i in model.rhs_pos]
    if not keys:
        return None
    col = {key: k for k, key in enumerate(keys)}
    tcol = {key: len(keys) + k for k, key in enumerate(keys)}
    width = 2 * len(keys)

    rows, rhs = [], []

    def add(data, cols, rv):
        rows.append((data, cols))
        rhs.append(rv)

    # value condition: c(p)'x <= alpha * vhat
    data, cols, const = [], [], 0.0
    for j in range(model.n):
        if j in model.wt:
            data.append(-x[j])
            cols.append(col[("cost", j)])
            const += q.mutable.cost[j].lo * x[j]
        else:
            const += lp.c[j] * x[j]
    add(data, cols, const - q.alpha * q.vhat)

    # demand rows that involve a mutable position, evaluated at the witness
    by_row = {}
    coo = lp.A.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        by_row.setdefault(int(i), []).append((int(j), float(v)))
    touched = {i for (i, _) in model.entry_pos} | set(model.rhs_pos)
    for i in sorted(touched):
        data, cols, const = [], [], 0.0
        seen = {j for (ii, j) in model.entry_pos if ii == i}
        for j, v in by_row.get(i, []):
            if j in seen:
                continue
            const += v * x[j]
        for (ii, j) in model.entry_pos:
            if ii != i:
                continue
            data.append(x[j])
            cols.append(col[("entry", i, j)])
            const += q.mutable.entries[(i, j)].lo * x[j]
        if i in model.bt:
            data.append(-1.0)
            cols.append(col[("rhs", i)])
            add(data, cols, q.mutable.rhs[i].lo - const)
        else:
            add(data, cols, lp.b[i] - const)

    # t >= |p - nominal| and the weighted-cost cap at the proven optimum
    cap_data, cap_cols = [], []
    for key in keys:
        iv = model.param_interval(key)
        nom = model.nominal_value(key)
        add([1.0, -1.0], [tcol[key], col[key]], iv.lo - nom)
        add([1.0, 1.0], [tcol[key], col[key]], nom - iv.lo)
        weight = 1.0 if key[0] == "rhs" else x[key[-1]]
        if weight > 0.0:
            cap_data.append(-weight)
            cap_cols.append(tcol[key])
    add(cap_data, cap_cols, -(zstar + 1e-7 * (1.0 + abs(zstar))))

    # matrix changes are operationally heavier than price changes, so among
    # equally optimal tuples spend l1 budget on costs before entries
    upper = np.empty(width)
    cost = np.zeros(width)
    for key in keys:
        iv = model.param_interval(key)
        nom = model.nominal_value(key)
        upper[col[key]] = iv.width
        upper[tcol[key]] = max(iv.hi - nom, nom - iv.lo)
        cost[tcol[key]] = 1000.0 if key[0] == "entry" else 1.0
    sol = solve(model.assemble(rows, rhs, cost, upper))
    if sol.status != LpStatus.OPTIMAL:
        return None

    c = lp.c.copy()
    A = lp.A.tolil(copy=True)
    b = lp.b.copy()
    for key in keys:
        iv = model.param_interval(key)
        nom = model.nominal_value(key)
        v = iv.clamp(sol.x[col[key]] + iv.lo)
        if abs(v - nom) < 1e-9:
            v = nom
        if key[0] == "cost":
            c[key[1]] = v
        elif key[0] == "entry":
            A[key[1], key[2]] = v
        else:
            b[key[1]] = v
    return Params(c, A.tocsr(), b)


def solve_rcep_direct(q: CeQuery, regime: str = X_WEIGHTED) -> CeResult:
    """One-shot LP for the x-weighted and scaled-by-xhat objectives.

    Always terminates Proven or Infeasible; the transformed feasible region
    is a polyhedron, so no search is involved.  For the x-weighted l1 case
    the recovered parameters are additionally the sparsest among tuples
    attaining the proven optimum with the same witness.
    """
    if regime not in (X_WEIGHTED, SCALED_BY_XHAT):
        raise AssumptionViolated(f"direct solve does not cover regime {regime!r}")
    model = _TransformedModel(q)
    positions = model.positions()
    norm = q.dist.norm
    # one t per position for l1; one t per column (and one for the rhs) for linf
    if norm == "l1":
        tcount = len(positions) + len(model.rhs_pos)
    else:
        cols = sorted({model.column_of(k) for k in positions})
        tcount = len(cols) + (1 if model.rhs_pos else 0)
    rows, rhs, width = model.base_rows(extra_vars=tcount)
    cost = np.zeros(width)
    upper = model.default_upper(width)

    scale_nominal = regime == X_WEIGHTED
    tbase = model.base_vars
    if norm == "l1":
        for t_off, key in enumerate(positions):
            _abs_split(model, rows, rhs, key, tbase + t_off, scale_nominal)
            cost[tbase + t_off] = 1.0
        off = len(positions)
        for t_off, i in enumerate(model.rhs_pos):
            _rhs_abs_split(model, rows, rhs, i, tbase + off + t_off)
            cost[tbase + off + t_off] = 1.0
    else:
        cols = sorted({model.column_of(k) for k in positions})
        col_t = {j: tbase + idx for idx, j in enumerate(cols)}
        for key in positions:
            _abs_split(model, rows, rhs, key, col_t[model.column_of(key)], scale_nominal)
        for j in cols:
            cost[col_t[j]] = 1.0
        if model.rhs_pos:
            tr = tbase + len(cols)
            for i in model.rhs_pos:
                _rhs_abs_split(model, rows, rhs, i, tr)
            cost[tr] = 1.0

    lp = model.assemble(rows, rhs, cost, upper)
    sol = solve(lp)
    if sol.status == LpStatus.INFEASIBLE:
        return _finish(q, CeStatus.INFEASIBLE, None, None, None)
    if sol.status != LpStatus.OPTIMAL:
        raise NumericalFailure(f"transformed problem came back {sol.status.name}")
    params, tp = model.recover(sol.x)
    extra = {"regime": regime}
    if regime == X_WEIGHTED and norm == "l1":
        entry_t = [tbase + off for off, key in enumerate(positions) if key[0] == "entry"]
        if entry_t:
            # optimal faces here are routinely degenerate: re-solve over the
            # face picking the witness that moves the matrix least
            cap = sol.objective + 1e-7 * (1.0 + abs(sol.objective))
            tcols = np.flatnonzero(cost).tolist()
            rows2 = rows + [([-1.0] * len(tcols), tcols)]
            rhs2 = rhs + [-cap]
            cost2 = np.zeros(width)
            cost2[entry_t] = 1.0
            sol2 = solve(model.assemble(rows2, rhs2, cost2, upper))
            if sol2.status == LpStatus.OPTIMAL:
                params, tp = model.recover(sol2.x)
                extra["witness_steered"] = True
        sparse = _sparsest_among_optimal(model, tp.x, sol.objective)
        if sparse is not None:
            params = sparse
            extra["sparsified"] = True
    res = _finish(q, CeStatus.PROVEN, params, tp.x, sol.objective, extra)
    res.lower_bound = sol.objective
    return res


def solve_rcep_bisect(q: CeQuery, regime: str = SINGLE_COLUMN, tol: float = 1e-7) -> CeResult:
    """Binary search on the epigraph level of the column distance.

    At a fixed level z the membership boxes tighten linearly in x, so each
    probe is one feasibility LP.  Returns the smallest feasible level, with
    the rhs distance minimized at that level as a tie-break.
    """
    if regime not in (SINGLE_COLUMN, MAX_AGGREGATION):
        raise AssumptionViolated(f"bisection does not cover regime {regime!r}")
    model = _TransformedModel(q)
    positions = model.positions()
    cols = sorted({model.column_of(k) for k in positions})
    if regime == SINGLE_COLUMN and len(cols) > 1:
        raise AssumptionViolated("single-column regime needs exactly one mutable column")

    z_max = sum(model.param_interval(k).width for k in positions)
    z_max += sum(q.mutable.rhs[i].width for i in model.rhs_pos)

    def probe(z: float, minimize_rhs: bool):
        tcount = len(positions) + (len(model.rhs_pos) if minimize_rhs else 0)
        rows, rhs, width = model.base_rows(extra_vars=tcount)
        cost = np.zeros(width)
        upper = model.default_upper(width)
        tbase = model.base_vars
        by_col = {j: [] for j in cols}
        for t_off, key in enumerate(positions):
            _abs_split(model, rows, rhs, key, tbase + t_off, scale_nominal=True)
            by_col[model.column_of(key)].append(tbase + t_off)
        if q.dist.norm == "l1":
            # sum of position deviations within a column stays below z x_j
            for j, tlist in by_col.items():
                rows.append(([z] + [-1.0] * len(tlist), [j] + tlist))
                rhs.append(0.0)
        else:
            for j, tlist in by_col.items():
                for tcol in tlist:
                    rows.append(([z, -1.0], [j, tcol]))
                    rhs.append(0.0)
        if minimize_rhs:
            off = len(positions)
            for t_off, i in enumerate(model.rhs_pos):
                _rhs_abs_split(model, rows, rhs, i, tbase + off + t_off)
                cost[tbase + off + t_off] = 1.0
        lp = model.assemble(rows, rhs, cost, upper)
        return solve(lp)

    hi_sol = probe(z_max, False)
    if hi_sol.status == LpStatus.INFEASIBLE:
        return _finish(q, CeStatus.INFEASIBLE, None, None, None, {"regime": regime})
    if hi_sol.status != LpStatus.OPTIMAL:
        raise NumericalFailure(f"feasibility probe came back {hi_sol.status.name}")
    lo, hi = 0.0, z_max
    lo_sol = probe(0.0, False)
    if lo_sol.status == LpStatus.OPTIMAL:
        hi = 0.0
    while hi - lo > tol * (1.0 + hi):
        mid = 0.5 * (lo + hi)
        sol = probe(mid, False)
        if sol.status == LpStatus.OPTIMAL:
            hi = mid
        else:
            lo = mid
    final = probe(hi, True)
    if final.status != LpStatus.OPTIMAL:
        # the tightened-level re-solve can wobble at the boundary; step out once
        hi = min(z_max, hi + tol * (1.0 + hi))
        final = probe(hi, True)
    if final.status != LpStatus.OPTIMAL:
        raise NumericalFailure("attaining level lost feasibility on re-solve")
    params, tp = model.recover(final.x)
    rhs_term = final.objective
    res = _finish(
        q,
        CeStatus.PROVEN,
        params,
        tp.x,
        hi + rhs_term,
        {"regime": regime, "level": hi, "rhs_term": rhs_term},
    )
    res.lower_bound = lo
    return res


def solve_rcep_bilinear(q: CeQuery, budget: Optional[BnbBudget] = None, seed_candidates: bool = True) -> CeResult:
    """Exact unweighted-sum objective via the bilinear engine.

    Variables are (x, mutable parameters, deviation extras); products tie
    each mutable cost or entry to its column's x.  Tie groups are honored by
    sharing one parameter variable across members.
    """
    if q.vhat < -1e-9 and q.alpha != 0:
        raise AssumptionViolated("relative budgets need a nonnegative present value")
    lp = q.lp
    n, m = lp.num_vars, lp.num_rows
    ms = q.mutable
    A_csc = lp.A.tocsc()

    # x boxes: upper bounds, falling back to favored caps
    x_lo = np.zeros(n)
    x_hi = lp.upper.copy()
    for j, cap in q.favored.caps.items():
        x_hi[j] = min(x_hi[j], cap)
    if not np.all(np.isfinite(x_hi)):
        raise AssumptionViolated(
            "bilinear search needs finite x bounds; add caps to the favored space"
        )

    tied = {}
    groups = list(ms.ties)
    for gi, g in enumerate(groups):
        for key, sign in g.members:
            tied[key] = (gi, float(sign))

    free_keys = [("cost", j) for j in sorted(ms.cost) if ("cost", j) not in tied]
    free_keys += [("entry", i, j) for (i, j) in sorted(ms.entries) if ("entry", i, j) not in tied]
    free_rhs = [i for i in sorted(ms.rhs) if ("rhs", i) not in tied]

    def nominal_of(key):
        if key[0] == "cost":
            return float(lp.c[key[1]])
        if key[0] == "entry":
            return float(A_csc[key[1], key[2]])
        return float(lp.b[key[1]])

    def interval_of(key):
        if key[0] == "cost":
            return ms.cost[key[1]]
        if key[0] == "entry":
            return ms.entries[(key[1], key[2])]
        return ms.rhs[key[1]]

    # variable layout: x | free params | group scalars | rhs params | t-deviations
    idx = n
    pvar = {}
    for key in free_keys:
        pvar[key] = idx
        idx += 1
    gvar = {}
    for gi in range(len(groups)):
        gvar[gi] = idx
        idx += 1
    bvar = {}
    for i in free_rhs:
        bvar[i] = idx
        idx += 1
    # one deviation var per position (tied members each count separately)
    dev_keys = free_keys + [("rhs", i) for i in free_rhs]
    dev_keys += [key for g in groups for key, _ in g.members]
    tvar = {}
    for key in dev_keys:
        tvar[("t",) + tuple(key)] = idx
        idx += 1
    nv = idx

    lo = np.zeros(nv)
    hi = np.full(nv, np.inf)
    lo[:n], hi[:n] = x_lo, x_hi
    for key, col in pvar.items():
        iv = interval_of(key)
        lo[col], hi[col] = iv.lo, iv.hi
    for gi, g in enumerate(groups):
        lo[gvar[gi]], hi[gvar[gi]] = g.box.lo, g.box.hi
    for i, col in bvar.items():
        iv = ms.rhs[i]
        lo[col], hi[col] = iv.lo, iv.hi
    for tk, col in tvar.items():
        lo[col] = 0.0
        key = tk[1:]
        nom = nominal_of(key)
        if key in tied:
            gi, sign = tied[key]
            gb = groups[gi].box
            span = max(abs(sign * gb.lo - nom), abs(sign * gb.hi - nom))
        else:
            ivk = interval_of(key)
            span = max(abs(ivk.lo - nom), abs(ivk.hi - nom))
        hi[col] = span

    # products: one per (cost or entry) position, z = param_var * x_col
    products = []
    prod_of = {}
    param_col_of_key = {}
    for key in free_keys:
        param_col_of_key[key] = pvar[key]
    for g, gi in zip(groups, range(len(groups))):
        for key, sign in g.members:
            if key[0] != "rhs":
                param_col_of_key[key] = gvar[gi]
    for key, pcol in param_col_of_key.items():
        jcol = key[1] if key[0] == "cost" else key[2]
        prod_of[key] = len(products)
        products.append((pcol, jcol))
    npz = len(products)

    rows = []  # (coeffs over v, coeffs over z, rhs)

    def sign_of(key):
        if key in tied:
            return tied[key][1]
        return 1.0

    # budget row: sum_j c_j x_j <= alpha vhat
    dv, cv, dz, cz = [], [], [], []
    for j in range(n):
        key = ("cost", j)
        if key in param_col_of_key:
            dz.append(-sign_of(key))
            cz.append(prod_of[key])
        else:
            dv.append(-float(lp.c[j]))
            cv.append(j)
    rows.append((dv, cv, dz, cz, -q.alpha * q.vhat))

    # demand rows
    by_row = {}
    coo = lp.A.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        by_row.setdefault(int(i), []).append((int(j), float(v)))
    for i in range(m):
        dv, cv, dz, cz = [], [], [], []
        seen = set()
        for j, v in by_row.get(i, []):
            key = ("entry", i, j)
            seen.add(j)
            if key in param_col_of_key:
                dz.append(sign_of(key))
                cz.append(prod_of[key])
            else:
                dv.append(v)
                cv.append(j)
        for (ii, j) in ms.entries:
            if ii == i and j not in seen:
                key = ("entry", i, j)
                dz.append(sign_of(key))
                cz.append(prod_of[key])
        rhs_key = ("rhs", i)
        if rhs_key in tied:
            gi, sign = tied[rhs_key]
            dv.append(-sign)
            cv.append(gvar[gi])
            rows.append((dv, cv, dz, cz, 0.0))
        elif i in bvar:
            dv.append(-1.0)
            cv.append(bvar[i])
            rows.append((dv, cv, dz, cz, 0.0))
        else:
            rows.append((dv, cv, dz, cz, float(lp.b[i])))

    # favored rows
    W, h = _favored_rows(q)
    wc = W.tocoo()
    fav = {}
    for r, j, v in zip(wc.row, wc.col, wc.data):
        fav.setdefault(int(r), []).append((int(j), -float(v)))
    for r in range(W.shape[0]):
        pairs = fav.get(r, [])
        rows.append(([v for _, v in pairs], [j for j, _ in pairs], [], [], -float(h[r])))

    # deviation rows: t >= |param - nominal| per position
    for tk, tcol in tvar.items():
        key = tk[1:]
        nom = nominal_of(key)
        if key in tied:
            gi, sign = tied[key]
            pcol = gvar[gi]
            s = sign
        elif key[0] == "rhs":
            pcol = bvar[key[1]]
            s = 1.0
        else:
            pcol = pvar[key]
            s = 1.0
        rows.append(([1.0, -s], [tcol, pcol], [], [], -nom))
        rows.append(([1.0, s], [tcol, pcol], [], [], nom))

    G_data, G_r, G_c = [], [], []
    H_data, H_r, H_c = [], [], []
    g_rhs = []
    for rix, (dv, cv, dz, cz, rv) in enumerate(rows):
        for d, c in zip(dv, cv):
            if d != 0.0:
                G_data.append(d)
                G_r.append(rix)
                G_c.append(c)
        for d, c in zip(dz, cz):
            H_data.append(d)
            H_r.append(rix)
            H_c.append(c)
        g_rhs.append(rv)
    G = sp.csr_matrix((G_data, (G_r, G_c)), shape=(len(rows), nv))
    H = sp.csr_matrix((H_data, (H_r, H_c)), shape=(len(rows), npz))

    qv = np.zeros(nv)
    for tcol in tvar.values():
        qv[tcol] = 1.0
    bp = BilinearProgram(qv, np.zeros(npz), G, H, np.array(g_rhs), lo, hi, tuple(products))

    def params_at(v):
        c = lp.c.copy()
        A = lp.A.tolil(copy=True)
        b = lp.b.copy()
        for key, pcol in param_col_of_key.items():
            val = sign_of(key) * v[pcol]
            if key not in tied:
                val = interval_of(key).clamp(val)
            if key[0] == "cost":
                c[key[1]] = val
            else:
                A[key[1], key[2]] = val
        for i in free_rhs:
            b[i] = ms.rhs[i].clamp(v[bvar[i]])
        for gi, g in enumerate(groups):
            for key, sign in g.members:
                if key[0] == "rhs":
                    b[key[1]] = sign * v[gvar[gi]]
        return Params(c, A.tocsr(), b)

    def node_polish(v):
        """Fix the parameters at the relaxation point and re-solve for x.

        The generic incumbent heuristic: with parameters frozen every product
        collapses, so one LP decides whether the node point completes to a
        feasible candidate.
        """
        p = params_at(v)
        try:
            s = solve(q.augmented_lp(p))
        except NumericalFailure:
            return None
        target = q.alpha * q.vhat
        if s.status != LpStatus.OPTIMAL or s.objective > target + 1e-7 * (1.0 + abs(target)):
            return None
        out = np.zeros(nv)
        out[:n] = np.clip(s.x, x_lo, x_hi)
        for key, col in pvar.items():
            out[col] = interval_of(key).clamp(v[col])
        for gi, g in enumerate(groups):
            out[gvar[gi]] = g.box.clamp(v[gvar[gi]])
        for i, col in bvar.items():
            out[col] = ms.rhs[i].clamp(v[col])
        for tk, col in tvar.items():
            key = tk[1:]
            if key in tied:
                gi, sign = tied[key]
                val = sign * out[gvar[gi]]
            elif key[0] == "rhs":
                val = out[bvar[key[1]]]
            else:
                val = out[pvar[key]]
            out[col] = abs(val - nominal_of(key))
        return out

    seeds = []
    if seed_candidates and not ms.ties:
        seeds = _bisect_seeds(q, x_hi, pvar, bvar, tvar, nominal_of, nv)
    seed_iter = iter(seeds)

    def polish(v):
        s = next(seed_iter, None)
        return s if s is not None else node_polish(v)

    res = solve_spatial_bnb(bp, budget or BnbBudget(), polish=polish)
    status = {
        BnbStatus.PROVEN: CeStatus.PROVEN,
        BnbStatus.INCUMBENT: CeStatus.INCUMBENT,
        BnbStatus.INFEASIBLE: CeStatus.INFEASIBLE,
        BnbStatus.BUDGET_EXHAUSTED: CeStatus.BUDGET_EXHAUSTED,
    }[res.status]
    if res.incumbent is None:
        out = _finish(q, status, None, None, None, {"nodes": res.node_count})
        out.lower_bound = res.lower_bound if np.isfinite(res.lower_bound) else None
        return out
    v = res.incumbent
    out = _finish(q, status, params_at(v), v[:n], res.objective, {"nodes": res.node_count})
    out.lower_bound = res.lower_bound
    return out


def _bisect_seeds(q, x_hi, pvar, bvar, tvar, nominal_of, nv):
    """Feasible start points for the bilinear search from per-column bisections."""
    from .model import MutableSpace

    seeds = []
    for j in sorted(set(q.mutable.mutable_columns())):
        cost = {j: q.mutable.cost[j]} if j in q.mutable.cost else {}
        entries = {k: v for k, v in q.mutable.entries.items() if k[1] == j}
        sub = MutableSpace(cost=cost, entries=entries, rhs=dict(q.mutable.rhs))
        try:
            sub_q = CeQuery(q.lp, q.xhat, q.favored, sub, alpha=q.alpha, dist=q.dist)
            # warm starts only; the search refines past seed precision
            r = solve_rcep_bisect(sub_q, SINGLE_COLUMN, tol=1e-4)
        except Exception:
            continue
        if r.status != CeStatus.PROVEN or r.candidate is None:
            continue
        v = np.zeros(nv)
        v[: q.lp.num_vars] = np.minimum(r.witness, x_hi)
        cand = r.candidate
        for key, col in pvar.items():
            if key[0] == "cost":
                v[col] = cand.c[key[1]]
            else:
                v[col] = cand.A[key[1], key[2]]
        for i, col in bvar.items():
            v[col] = cand.b[i]
        for tk, col in tvar.items():
            key = tk[1:]
            if key[0] == "cost":
                v[col] = abs(cand.c[key[1]] - nominal_of(key))
            elif key[0] == "entry":
                v[col] = abs(cand.A[key[1], key[2]] - nominal_of(key))
            else:
                v[col] = abs(cand.b[key[1]] - nominal_of(key))
        seeds.append(v)
    return seeds
