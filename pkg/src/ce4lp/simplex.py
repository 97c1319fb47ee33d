"""Two-phase primal simplex on the bounded-variable canonical form.

Internal computational form: rows become equalities A x - s = b with
surplus s >= 0, artificials are added for rows with positive rhs only.
The basis inverse is kept dense, updated by the product form each pivot
and refactorized from scratch every REFACTOR_EVERY pivots.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import NumericalFailure
from .lp import LinearProgram, LpSolution, LpStatus

PIVOT_TOL = 1e-7
FEAS_TOL = 1e-7
RATIO_TOL = 1e-9
REFACTOR_EVERY = 100
DEGENERATE_BEFORE_BLAND = 40
# below this element count the working matrix is kept dense; sparse column
# slicing costs more than it saves on desk-scale problems
DENSE_CACHE_ELEMS = 2_000_000

_LOWER, _UPPER, _BASIC = 0, 1, 2


def simplex_solve(lp: LinearProgram) -> LpSolution:
    m, n = lp.num_rows, lp.num_vars
    if n == 0 or m == 0:
        return _solve_degenerate_shape(lp)
    return _Engine(lp).run()


def _solve_degenerate_shape(lp: LinearProgram) -> LpSolution:
    """Rows or columns absent: the answer is immediate."""
    m, n = lp.num_rows, lp.num_vars
    if n == 0:
        if np.all(lp.b <= FEAS_TOL * (1.0 + np.abs(lp.b))):
            return LpSolution(LpStatus.OPTIMAL, np.zeros(0), np.zeros(m), 0.0)
        ray = np.zeros(m)
        ray[int(np.argmax(lp.b))] = 1.0
        return LpSolution(LpStatus.INFEASIBLE, residuals={"farkas_ray": ray})
    # m == 0: minimize each coordinate independently over its box.
    x = np.where(lp.c < 0, lp.upper, 0.0)
    bad = (lp.c < 0) & ~np.isfinite(lp.upper)
    if np.any(bad):
        d = np.zeros(n)
        d[int(np.argmax(bad))] = 1.0
        return LpSolution(LpStatus.UNBOUNDED, residuals={"unbounded_direction": d})
    return LpSolution(LpStatus.OPTIMAL, x, np.zeros(0), float(lp.c @ x))


class _Engine:
    def __init__(self, lp: LinearProgram):
        self.lp = lp
        m, n = lp.num_rows, lp.num_vars
        self.m, self.n = m, n
        pos_rows = np.where(lp.b > 0)[0]
        self.n_art = pos_rows.size
        self.N = n + m + self.n_art
        if m * self.N <= DENSE_CACHE_ELEMS:
            Fd = np.zeros((m, self.N))
            Fd[:, :n] = lp.A.toarray()
            rows = np.arange(m)
            Fd[rows, n + rows] = -1.0
            Fd[pos_rows, n + m + np.arange(self.n_art)] = 1.0
            self.F, self.Fd = None, Fd
        else:
            art = sp.csc_matrix(
                (np.ones(self.n_art), (pos_rows, np.arange(self.n_art))), shape=(m, self.n_art)
            )
            self.F = sp.hstack(
                [sp.csc_matrix(lp.A), -sp.identity(m, format="csc"), art], format="csc"
            )
            self.Fd = None
        self.lb = np.zeros(self.N)
        self.ub = np.concatenate([lp.upper, np.full(m + self.n_art, np.inf)])
        self.art_cols = np.arange(n + m, self.N)

        self.xval = np.zeros(self.N)
        self.basis = np.empty(m, dtype=int)
        self.vstat = np.full(self.N, _LOWER, dtype=np.int8)
        pos_mask = lp.b > 0
        self.basis[pos_mask] = n + m + np.arange(self.n_art)
        self.basis[~pos_mask] = n + np.where(~pos_mask)[0]
        self.vstat[self.basis] = _BASIC
        self.xval[self.basis] = np.abs(lp.b)
        self.Binv = np.diag(np.where(pos_mask, 1.0, -1.0))

        self.cost = np.zeros(self.N)
        self.cost[self.art_cols] = 1.0
        self.fixed = self.ub <= self.lb + 1e-300
        self.phase = 1
        self.iterations = 0
        self.pivots_since_refactor = 0
        self.degenerate_run = 0
        self.bland = False
        self.max_iter = max(20000, 60 * (m + n))

    # ------------------------------------------------------------------ basis

    def refactor(self):
        B = self.Fd[:, self.basis] if self.Fd is not None else self.F[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis during refactorization") from exc
        self.pivots_since_refactor = 0
        self.recompute_basics()

    def recompute_basics(self):
        vals = self.xval.copy()
        vals[self.basis] = 0.0
        A = self.Fd if self.Fd is not None else self.F
        rhs = self.lp.b - A @ vals
        self.xval[self.basis] = self.Binv @ rhs

    def column(self, j: int) -> np.ndarray:
        if self.Fd is not None:
            return self.Fd[:, j]
        return self.F[:, [j]].toarray().ravel()

    # ------------------------------------------------------------------ steps

    def reduced_costs(self):
        y = self.cost[self.basis] @ self.Binv
        if self.Fd is not None:
            return self.cost - y @ self.Fd, y
        return self.cost - self.F.T @ y, y

    def choose_entering(self, rc):
        cand = ((self.vstat == _LOWER) & (rc < -PIVOT_TOL) & ~self.fixed) | (
            (self.vstat == _UPPER) & (rc > PIVOT_TOL)
        )
        idx = np.where(cand)[0]
        if idx.size == 0:
            return -1
        if self.bland:
            return int(idx[0])
        return int(idx[np.argmax(np.abs(rc[idx]))])

    def run(self) -> LpSolution:
        sol = self.iterate_phase()
        if sol is not None:
            return sol
        # Phase 1 ended optimal; decide feasibility.
        p1 = float(self.cost[self.basis] @ self.xval[self.basis])
        if p1 > FEAS_TOL:
            # drift can inflate the artificial mass; judge from a clean basis
            self.refactor()
            p1 = float(self.cost[self.basis] @ self.xval[self.basis])
        if p1 > FEAS_TOL and self.rows_violated():
            y = self.cost[self.basis] @ self.Binv
            return LpSolution(
                LpStatus.INFEASIBLE,
                iterations=self.iterations,
                residuals={"farkas_ray": np.maximum(y, 0.0), "phase1_objective": p1},
            )
        self.enter_phase2()
        sol = self.iterate_phase()
        if sol is not None:
            return sol
        return self.extract_optimal()

    def rows_violated(self) -> bool:
        """Per-row residual check of the structural point, scaled per row."""
        x = np.minimum(np.maximum(self.xval[: self.n], 0.0), self.lp.upper)
        viol = np.maximum(self.lp.b - self.lp.A @ x, 0.0)
        return bool(np.any(viol > FEAS_TOL * (1.0 + np.abs(self.lp.b))))

    def enter_phase2(self):
        self.ub[self.art_cols] = 0.0
        self.fixed[self.art_cols] = True
        self.xval[self.art_cols] = np.where(self.vstat[self.art_cols] == _BASIC,
                                            self.xval[self.art_cols], 0.0)
        self.pivot_out_artificials()
        self.cost[:] = 0.0
        self.cost[: self.n] = self.lp.c
        self.phase = 2
        self.bland = False
        self.degenerate_run = 0

    def pivot_out_artificials(self):
        for r in range(self.m):
            j = self.basis[r]
            if j < self.n + self.m:
                continue
            self.xval[j] = 0.0
            if self.Fd is not None:
                row = self.Binv[r, :] @ self.Fd[:, : self.n + self.m]
            else:
                row = self.F[:, : self.n + self.m].T @ self.Binv[r, :]
            usable = np.where((np.abs(row) > 1e-7) & (self.vstat[: self.n + self.m] != _BASIC))[0]
            if usable.size == 0:
                continue  # redundant row, artificial stays basic at zero
            e = int(usable[np.argmax(np.abs(row[usable]))])
            d = self.Binv @ self.column(e)
            self.apply_pivot(e, r, d, t=0.0, sigma=1.0)

    def iterate_phase(self):
        """Run simplex iterations; None means the phase reached optimality."""
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalFailure(f"iteration budget exhausted ({self.max_iter})")
            rc, _ = self.reduced_costs()
            e = self.choose_entering(rc)
            if e < 0:
                return None
            sigma = 1.0 if self.vstat[e] == _LOWER else -1.0
            d = self.Binv @ self.column(e)
            delta = -sigma * d
            t, r = self.ratio_test(e, delta)
            if t is None:
                if self.phase == 1:
                    raise NumericalFailure("phase 1 became unbounded, numerical trouble")
                return self.extract_unbounded(e, sigma, d)
            self.iterations += 1
            if r < 0:
                # bound flip of the entering variable
                width = self.ub[e] - self.lb[e]
                self.xval[self.basis] += width * delta
                self.xval[e] = self.ub[e] if sigma > 0 else self.lb[e]
                self.vstat[e] = _UPPER if sigma > 0 else _LOWER
                continue
            self.apply_pivot(e, r, d, t, sigma)

    def ratio_test(self, e, delta):
        """Smallest step before a basic variable or the entering bound blocks."""
        xb = self.xval[self.basis]
        ubb = self.ub[self.basis]
        t_all = np.full(self.m, np.inf)
        dec = delta < -RATIO_TOL
        t_all[dec] = np.maximum(xb[dec], 0.0) / -delta[dec]
        inc = (delta > RATIO_TOL) & np.isfinite(ubb)
        t_all[inc] = np.maximum(ubb[inc] - xb[inc], 0.0) / delta[inc]
        r = -1
        t = np.inf
        if np.any(np.isfinite(t_all)):
            t = float(np.min(t_all))
            ties = np.where(t_all <= t + 1e-10)[0]
            if self.bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(delta[ties]))])
        width = self.ub[e] - self.lb[e]
        if np.isfinite(width) and width < t:
            return float(width), -1
        if not np.isfinite(t):
            return None, -1
        return max(t, 0.0), r

    def apply_pivot(self, e, r, d, t, sigma):
        if abs(d[r]) < 1e-11:
            self.refactor()
            d = self.Binv @ self.column(e)
            if abs(d[r]) < 1e-11:
                raise NumericalFailure("vanishing pivot element")
        lv = int(self.basis[r])
        delta_r = -sigma * d[r]
        self.xval[self.basis] += t * (-sigma * d)
        self.xval[e] = (self.lb[e] if sigma > 0 else self.ub[e]) + sigma * t
        if lv != e:
            if delta_r < 0:
                self.vstat[lv] = _LOWER
                self.xval[lv] = self.lb[lv]
            else:
                self.vstat[lv] = _UPPER
                self.xval[lv] = self.ub[lv]
        self.basis[r] = e
        self.vstat[e] = _BASIC

        pr = d[r]
        self.Binv[r, :] /= pr
        others = np.arange(self.m) != r
        self.Binv[others, :] -= np.outer(d[others], self.Binv[r, :])

        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= REFACTOR_EVERY:
            self.refactor()
        if t <= 1e-9:
            self.degenerate_run += 1
            if self.degenerate_run >= DEGENERATE_BEFORE_BLAND:
                self.bland = True
        else:
            self.degenerate_run = 0
            self.bland = False

    # ------------------------------------------------------------------ exits

    def extract_optimal(self) -> LpSolution:
        self.refactor()
        n, m = self.n, self.m
        x = self.xval[:n].copy()
        x = np.minimum(np.maximum(x, 0.0), self.lp.upper)
        y = np.maximum(self.cost[self.basis] @ self.Binv, 0.0)
        obj = float(self.lp.c @ x)
        resid = {}
        if m:
            viol = np.maximum(self.lp.b - self.lp.A @ x, 0.0)
            if np.any(viol > 10.0 * FEAS_TOL * (1.0 + np.abs(self.lp.b))):
                raise NumericalFailure(
                    f"optimal basis violates a row by {float(viol.max()):.3e}"
                )
            resid["primal_infeasibility"] = float(viol.max())
        return LpSolution(LpStatus.OPTIMAL, x, y, obj, self.iterations, resid)

    def extract_unbounded(self, e, sigma, d) -> LpSolution:
        full = np.zeros(self.N)
        full[e] = sigma
        full[self.basis] += -sigma * d
        direction = full[: self.n].copy()
        return LpSolution(
            LpStatus.UNBOUNDED,
            iterations=self.iterations,
            residuals={"unbounded_direction": direction},
        )
