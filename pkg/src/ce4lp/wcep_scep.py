"""Weak and strong explanations: reshape the optimal face itself.

A weak explanation makes some optimal solution land in the favored region;
a strong one forces every optimal solution there.  Both are searched as
bilinear feasibility systems over (parameters, primal point, dual prices):
optimality of the point is written as primal feasibility, dual feasibility
and a vanishing duality gap, and parameter-times-variable terms become
products for the spatial branch-and-bound.  Upper bounds are folded into
the dual as explicit bound prices, never as big-M rows.

The strong system adds, for every favored half-space, a multiplier block
certifying that even the least favorable point of the optimal face stays
inside it.  Incumbents are only accepted after the independent verification
oracle passes, and candidate generation leans on fix-and-repair rounds:
freeze the point (and the prices where entries or rhs move), then the
remaining repair problem in the parameters alone is a plain LP.

Dual prices and face multipliers carry artificial bounds so the search box
stays compact.  An incumbent hugging one of those bounds is suspect: the
solver doubles the bound and re-solves a few times, and never reports a
proof obtained under a binding artificial bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .bilinear import BilinearProgram, BnbBudget, BnbStatus, solve_spatial_bnb
from .errors import AssumptionViolated
from .lp import LinearProgram, LpStatus, solve
from .model import CeKind, CeQuery, CeResult, CeStatus, Params, l1_change
from .verify import EPS_GAP, verify_strong, verify_weak

ARTIFICIAL_BOUND = 1e4
BOUND_NEAR = 1e-3  # incumbent within this fraction of an artificial bound is suspect
MAX_BOUND_GROWTH = 3
MARGIN_SCALE = 1e-3  # strictness margin for uniqueness repair, times the cost scale


@dataclass(frozen=True)
class SearchBounds:
    """Artificial box sizes for quantities the problem leaves unbounded."""

    x_max: float = ARTIFICIAL_BOUND
    y_max: float = ARTIFICIAL_BOUND
    dual_max: float = ARTIFICIAL_BOUND

    def doubled(self) -> "SearchBounds":
        return SearchBounds(2 * self.x_max, 2 * self.y_max, 2 * self.dual_max)


def _guard(q: CeQuery) -> None:
    ms = q.mutable
    if not (ms.cost or ms.entries or ms.rhs or ms.ties):
        raise AssumptionViolated("no mutable parameters to search over")
    if q.dist.norm != "l1" or q.dist.aggregation != "sum":
        raise AssumptionViolated(
            "weak/strong search minimizes the plain l1 parameter distance; "
            f"got norm={q.dist.norm!r} aggregation={q.dist.aggregation!r}"
        )


class _System:
    """Variable layout and row assembly shared by the weak and strong systems.

    Variables: x (n), y (m row prices), v (bound prices for finite uppers),
    one variable per untied mutable position, one scalar per tie group, then
    for the strong system per favored row: lam (m), mu (finite uppers),
    gam (n) and tau (1), and finally one t per mutable position for the
    distance.  All rows are written in >= form.
    """

    def __init__(self, q: CeQuery, bounds: SearchBounds, strong: bool):
        self.q = q
        self.bounds = bounds
        self.strong = strong
        lp = q.lp
        ms = q.mutable
        self.n, self.m = lp.num_vars, lp.num_rows
        self.finite = [j for j in range(self.n) if np.isfinite(lp.upper[j])]
        poly = q.favored_polyhedron()
        self.W = poly.W.toarray()
        self.h = np.asarray(poly.h, dtype=float)
        self.r = self.W.shape[0] if strong else 0
        self.A_csc = lp.A.tocsc()

        tied = {}
        for gi, g in enumerate(ms.ties):
            for key, sign in g.members:
                tied[key] = (gi, float(sign))
        self.tied = tied
        free = [("cost", j) for j in sorted(ms.cost)]
        free += [("entry", i, j) for (i, j) in sorted(ms.entries)]
        free += [("rhs", i) for i in sorted(ms.rhs)]
        self.free_keys = [k for k in free if k not in tied]
        self.member_keys = self.free_keys + [k for g in ms.ties for k, _ in g.members]

        idx = 0
        self.ix = idx
        idx += self.n
        self.iy = idx
        idx += self.m
        self.iv = {j: idx + t for t, j in enumerate(self.finite)}
        idx += len(self.finite)
        self.pcol = {k: idx + t for t, k in enumerate(self.free_keys)}
        idx += len(self.free_keys)
        self.gcol = {gi: idx + t for t, gi in enumerate(range(len(ms.ties)))}
        idx += len(ms.ties)
        if strong:
            self.lam = {}
            self.mu = {}
            self.gam = {}
            self.tau = {}
            for k in range(self.r):
                self.lam[k] = idx
                idx += self.m
                self.mu[k] = {j: idx + t for t, j in enumerate(self.finite)}
                idx += len(self.finite)
                self.gam[k] = idx
                idx += self.n
                self.tau[k] = idx
                idx += 1
        self.tcol = {k: idx + t for t, k in enumerate(self.member_keys)}
        idx += len(self.member_keys)
        self.nv = idx

        self.rows = []
        self.products = []
        self._zmemo = {}
        self._build_rows()

    # ------------------------------------------------------------- param terms

    def term(self, key):
        """(column, sign) of the variable holding this position, or None."""
        if key in self.tied:
            gi, sign = self.tied[key]
            return self.gcol[gi], sign
        if key in self.pcol:
            return self.pcol[key], 1.0
        return None

    def nominal_of(self, key) -> float:
        lp = self.q.lp
        if key[0] == "cost":
            return float(lp.c[key[1]])
        if key[0] == "entry":
            return float(self.A_csc[key[1], key[2]])
        return float(lp.b[key[1]])

    def param_box(self, key):
        if key in self.tied:
            gi, _ = self.tied[key]
            return self.q.mutable.ties[gi].box
        return self.q.mutable.interval(key)

    def z(self, a: int, b: int) -> int:
        pair = (a, b) if a <= b else (b, a)
        if pair not in self._zmemo:
            self._zmemo[pair] = len(self.products)
            self.products.append(pair)
        return self._zmemo[pair]

    # -------------------------------------------------------------------- rows

    def add(self, gd, gc, hd, hc, rhs):
        self.rows.append((list(gd), list(gc), list(hd), list(hc), float(rhs)))

    def _row_entries(self, i: int):
        """Nominal nonzeros of row i merged with its mutable positions."""
        col = {}
        a = self.q.lp.A.getrow(i).tocoo()
        for j, val in zip(a.col, a.data):
            col[int(j)] = float(val)
        out = []
        for j in range(self.n):
            key = ("entry", i, j)
            t = self.term(key)
            if t is not None:
                out.append((j, None, t))
            elif j in col:
                out.append((j, col[j], None))
        return out

    def _col_entries(self, j: int):
        col = {}
        a = self.A_csc.getcol(j).tocoo()
        for i, val in zip(a.row, a.data):
            col[int(i)] = float(val)
        out = []
        for i in range(self.m):
            key = ("entry", i, j)
            t = self.term(key)
            if t is not None:
                out.append((i, None, t))
            elif i in col:
                out.append((i, col[i], None))
        return out

    def _build_rows(self):
        q, lp = self.q, self.q.lp
        n, m = self.n, self.m
        eps = EPS_GAP

        # primal rows: A x >= b, entry products a_ij x_j, mutable rhs on the left
        for i in range(m):
            gd, gc, hd, hc = [], [], [], []
            for j, val, t in self._row_entries(i):
                if t is None:
                    gd.append(val)
                    gc.append(self.ix + j)
                else:
                    pc, sign = t
                    hd.append(sign)
                    hc.append(self.z(pc, self.ix + j))
            bt = self.term(("rhs", i))
            if bt is None:
                rhs = float(lp.b[i])
            else:
                pb, sign = bt
                gd.append(-sign)
                gc.append(pb)
                rhs = 0.0
            self.add(gd, gc, hd, hc, rhs)

        # favored region on x: -W x >= -h
        for k in range(self.W.shape[0]):
            gd, gc = [], []
            for j in range(n):
                if self.W[k, j] != 0.0:
                    gd.append(-self.W[k, j])
                    gc.append(self.ix + j)
            self.add(gd, gc, [], [], -float(self.h[k]))

        # dual feasibility per column: c_j - (A' y)_j + v_j >= 0
        for j in range(n):
            gd, gc, hd, hc = [], [], [], []
            rhs = 0.0
            ct = self.term(("cost", j))
            if ct is None:
                rhs -= float(lp.c[j])
            else:
                pc, sign = ct
                gd.append(sign)
                gc.append(pc)
            for i, val, t in self._col_entries(j):
                if t is None:
                    gd.append(-val)
                    gc.append(self.iy + i)
                else:
                    pa, sign = t
                    hd.append(-sign)
                    hc.append(self.z(pa, self.iy + i))
            if j in self.iv:
                gd.append(1.0)
                gc.append(self.iv[j])
            self.add(gd, gc, hd, hc, rhs)

        # duality gap: -(c' x) + b' y - u' v >= -eps
        gd, gc, hd, hc = [], [], [], []
        for j in range(n):
            ct = self.term(("cost", j))
            if ct is None:
                if lp.c[j] != 0.0:
                    gd.append(-float(lp.c[j]))
                    gc.append(self.ix + j)
            else:
                pc, sign = ct
                hd.append(-sign)
                hc.append(self.z(pc, self.ix + j))
        for i in range(m):
            bt = self.term(("rhs", i))
            if bt is None:
                if lp.b[i] != 0.0:
                    gd.append(float(lp.b[i]))
                    gc.append(self.iy + i)
            else:
                pb, sign = bt
                hd.append(sign)
                hc.append(self.z(pb, self.iy + i))
        for j in self.finite:
            gd.append(-float(lp.upper[j]))
            gc.append(self.iv[j])
        self.add(gd, gc, hd, hc, -eps)

        if self.strong:
            self._build_strong_rows()

        # distance splits: t >= p - nominal and t >= nominal - p
        for key in self.member_keys:
            col, sign = self.term(key)
            nom = self.nominal_of(key)
            t = self.tcol[key]
            self.add([1.0, -sign], [t, col], [], [], -nom)
            self.add([1.0, sign], [t, col], [], [], nom)

    def _build_strong_rows(self):
        """Face-wide favor certificates: for each favored row w' x <= h_k,
        multipliers (lam, mu, tau) bound the face maximum of w' x by h_k,
        with gam standing for tau times an optimal point."""
        q, lp = self.q, self.q.lp
        n, m = self.n, self.m
        for k in range(self.r):
            lam0, mu_k, gam0, tau = self.lam[k], self.mu[k], self.gam[k], self.tau[k]

            # h_k + b' lam - u' mu - c' gam >= 0
            gd, gc, hd, hc = [], [], [], []
            for i in range(m):
                bt = self.term(("rhs", i))
                if bt is None:
                    if lp.b[i] != 0.0:
                        gd.append(float(lp.b[i]))
                        gc.append(lam0 + i)
                else:
                    pb, sign = bt
                    hd.append(sign)
                    hc.append(self.z(pb, lam0 + i))
            for j in self.finite:
                gd.append(-float(lp.upper[j]))
                gc.append(mu_k[j])
            for j in range(n):
                ct = self.term(("cost", j))
                if ct is None:
                    if lp.c[j] != 0.0:
                        gd.append(-float(lp.c[j]))
                        gc.append(gam0 + j)
                else:
                    pc, sign = ct
                    hd.append(-sign)
                    hc.append(self.z(pc, gam0 + j))
            self.add(gd, gc, hd, hc, -float(self.h[k]))

            # per column j: c_j tau - (A' lam)_j + mu_j >= w_kj
            for j in range(n):
                gd, gc, hd, hc = [], [], [], []
                ct = self.term(("cost", j))
                if ct is None:
                    if lp.c[j] != 0.0:
                        gd.append(float(lp.c[j]))
                        gc.append(tau)
                else:
                    pc, sign = ct
                    hd.append(sign)
                    hc.append(self.z(pc, tau))
                for i, val, t in self._col_entries(j):
                    if t is None:
                        gd.append(-val)
                        gc.append(lam0 + i)
                    else:
                        pa, sign = t
                        hd.append(-sign)
                        hc.append(self.z(pa, lam0 + i))
                if j in mu_k:
                    gd.append(1.0)
                    gc.append(mu_k[j])
                self.add(gd, gc, hd, hc, float(self.W[k, j]))

            # per row i: (A gam)_i - b_i tau >= 0
            for i in range(m):
                gd, gc, hd, hc = [], [], [], []
                for j, val, t in self._row_entries(i):
                    if t is None:
                        gd.append(val)
                        gc.append(gam0 + j)
                    else:
                        pa, sign = t
                        hd.append(sign)
                        hc.append(self.z(pa, gam0 + j))
                bt = self.term(("rhs", i))
                if bt is None:
                    if lp.b[i] != 0.0:
                        gd.append(-float(lp.b[i]))
                        gc.append(tau)
                else:
                    pb, sign = bt
                    hd.append(-sign)
                    hc.append(self.z(pb, tau))
                self.add(gd, gc, hd, hc, 0.0)

            # per finite upper: u_j tau - gam_j >= 0
            for j in self.finite:
                self.add(
                    [float(lp.upper[j]), -1.0], [tau, gam0 + j], [], [], 0.0
                )

    # ------------------------------------------------------------- the program

    def boxes(self):
        lp, bd = self.q.lp, self.bounds
        lo = np.zeros(self.nv)
        hi = np.empty(self.nv)
        for j in range(self.n):
            hi[self.ix + j] = min(float(lp.upper[j]), bd.x_max)
        hi[self.iy : self.iy + self.m] = bd.y_max
        for col in self.iv.values():
            hi[col] = bd.y_max
        for key, col in self.pcol.items():
            iv = self.param_box(key)
            lo[col], hi[col] = iv.lo, iv.hi
        for gi, col in self.gcol.items():
            box = self.q.mutable.ties[gi].box
            lo[col], hi[col] = box.lo, box.hi
        if self.strong:
            for k in range(self.r):
                hi[self.lam[k] : self.lam[k] + self.m] = bd.dual_max
                for col in self.mu[k].values():
                    hi[col] = bd.dual_max
                hi[self.gam[k] : self.gam[k] + self.n] = bd.dual_max
                hi[self.tau[k]] = bd.dual_max
        for key, col in self.tcol.items():
            box = self.param_box(key)
            nom = self.nominal_of(key)
            _, sign = self.term(key)
            span = max(abs(sign * box.lo - nom), abs(sign * box.hi - nom))
            hi[col] = span
        return lo, hi

    def bilinear(self) -> BilinearProgram:
        gD, gR, gC, hD, hR, hC, rhs = [], [], [], [], [], [], []
        for rix, (gd, gc, hd, hc, rv) in enumerate(self.rows):
            for d, c in zip(gd, gc):
                if d != 0.0:
                    gD.append(d)
                    gR.append(rix)
                    gC.append(c)
            for d, c in zip(hd, hc):
                hD.append(d)
                hR.append(rix)
                hC.append(c)
            rhs.append(rv)
        G = sp.csr_matrix((gD, (gR, gC)), shape=(len(self.rows), self.nv))
        H = sp.csr_matrix((hD, (hR, hC)), shape=(len(self.rows), len(self.products)))
        qv = np.zeros(self.nv)
        for col in self.tcol.values():
            qv[col] = 1.0
        lo, hi = self.boxes()
        return BilinearProgram(
            qv, np.zeros(len(self.products)), G, H, np.array(rhs), lo, hi,
            tuple(self.products),
        )

    # --------------------------------------------------------------- transfers

    def params_of(self, v: np.ndarray) -> Params:
        lp = self.q.lp
        c = lp.c.copy()
        A = lp.A.tolil(copy=True)
        b = lp.b.copy()
        for key in self.member_keys:
            col, sign = self.term(key)
            val = sign * v[col]
            if key not in self.tied:
                val = self.param_box(key).clamp(val)
            if key[0] == "cost":
                c[key[1]] = val
            elif key[0] == "entry":
                A[key[1], key[2]] = val
            else:
                b[key[1]] = val
        return Params(c, A.tocsr(), b)

    def vector_of(self, params: Params) -> Optional[np.ndarray]:
        """Full search vector consistent with these parameters, or None.

        Point and prices come from fresh solves; the strong multiplier
        blocks from small certificate LPs at the fixed parameters.
        """
        q = self.q
        lp = params.as_lp(q.lp)
        plain = solve(lp)
        if plain.status != LpStatus.OPTIMAL:
            return None
        aug = solve(q.augmented_lp(params))
        if aug.status != LpStatus.OPTIMAL:
            return None
        v = np.zeros(self.nv)
        x = aug.x
        y = plain.y
        vdual = np.maximum(0.0, lp.A.T @ y - lp.c)
        v[self.ix : self.ix + self.n] = x
        v[self.iy : self.iy + self.m] = y
        for j, col in self.iv.items():
            v[col] = vdual[j]
        A_csc = lp.A.tocsc()
        for key in self.member_keys:
            col, sign = self.term(key)
            if key[0] == "cost":
                val = float(lp.c[key[1]])
            elif key[0] == "entry":
                val = float(A_csc[key[1], key[2]])
            else:
                val = float(lp.b[key[1]])
            v[col] = sign * val  # sign*sign*g recovers the group scalar
            v[self.tcol[key]] = abs(val - self.nominal_of(key))
        if self.strong:
            certs = _face_certificates(self, params)
            if certs is None:
                return None
            for k, (lam, mu, gam, tau) in enumerate(certs):
                v[self.lam[k] : self.lam[k] + self.m] = lam
                for t, j in enumerate(self.finite):
                    v[self.mu[k][j]] = mu[t]
                v[self.gam[k] : self.gam[k] + self.n] = gam
                v[self.tau[k]] = tau
        return v

    def suspect(self, v: np.ndarray) -> bool:
        """Does the incumbent hug an artificial (non-structural) bound?"""
        bd = self.bounds
        near = lambda val, bound: val >= bound * (1.0 - BOUND_NEAR)
        lp = self.q.lp
        for j in range(self.n):
            if not np.isfinite(lp.upper[j]) and near(v[self.ix + j], bd.x_max):
                return True
        for col in range(self.iy, self.iy + self.m):
            if near(v[col], bd.y_max):
                return True
        for col in self.iv.values():
            if near(v[col], bd.y_max):
                return True
        if self.strong:
            for k in range(self.r):
                block = list(range(self.lam[k], self.lam[k] + self.m))
                block += list(self.mu[k].values())
                block += list(range(self.gam[k], self.gam[k] + self.n))
                block.append(self.tau[k])
                for col in block:
                    if near(v[col], bd.dual_max):
                        return True
        return False


def build_wcep(q: CeQuery, bounds: Optional[SearchBounds] = None):
    """Bilinear system whose feasible points are weak explanations.

    Returns (program, system); the system maps vectors back to parameters.
    """
    _guard(q)
    sys_ = _System(q, bounds or SearchBounds(), strong=False)
    return sys_.bilinear(), sys_


def build_scep(q: CeQuery, bounds: Optional[SearchBounds] = None):
    """Bilinear system whose feasible points are strong explanations."""
    _guard(q)
    sys_ = _System(q, bounds or SearchBounds(), strong=True)
    return sys_.bilinear(), sys_


# ------------------------------------------------------------------ certificates


def _face_certificates(sys_: _System, params: Params):
    """Per favored row, multipliers bounding the face maximum of w' x.

    At fixed parameters the certificate rows are linear, so each block is
    one small LP.  Returns None when any block fails inside the dual box.
    """
    q = sys_.q
    lp = params.as_lp(q.lp)
    n, m = sys_.n, sys_.m
    finite = sys_.finite
    nf = len(finite)
    A = lp.A.toarray()
    bd = sys_.bounds
    out = []
    for k in range(sys_.W.shape[0]):
        w = sys_.W[k]
        hk = float(sys_.h[k])
        # variables: lam (m), mu (nf), gam (n), tau (1)
        nv = m + nf + n + 1
        rows, rhs = [], []
        # h + b'lam - u'mu - c'gam >= 0
        gd = list(lp.b) + [-float(lp.upper[j]) for j in finite] + list(-lp.c) + [0.0]
        rows.append(gd)
        rhs.append(-hk)
        # c_j tau - (A'lam)_j + mu_j >= w_j
        for j in range(n):
            gd = list(-A[:, j]) + [0.0] * nf + [0.0] * n + [float(lp.c[j])]
            if j in sys_.iv:
                gd[m + finite.index(j)] = 1.0
            rows.append(gd)
            rhs.append(float(w[j]))
        # (A gam)_i - b_i tau >= 0
        for i in range(m):
            gd = [0.0] * (m + nf) + list(A[i]) + [-float(lp.b[i])]
            rows.append(gd)
            rhs.append(0.0)
        # u_j tau - gam_j >= 0
        for t, j in enumerate(finite):
            gd = [0.0] * nv
            gd[m + nf + j] = -1.0
            gd[-1] = float(lp.upper[j])
            rows.append(gd)
            rhs.append(0.0)
        cost = np.ones(nv)  # smallest multipliers preferred
        upper = np.full(nv, bd.dual_max)
        cert = solve(
            LinearProgram(cost, sp.csr_matrix(np.array(rows)), np.array(rhs), upper)
        )
        if cert.status != LpStatus.OPTIMAL:
            return None
        lam = cert.x[:m]
        mu = cert.x[m : m + nf]
        gam = cert.x[m + nf : m + nf + n]
        tau = cert.x[-1]
        out.append((lam, mu, gam, tau))
    return out


# ------------------------------------------------------------------------ repair


class _ParamLp:
    """Rows over (shifted mutable parameters, extra nonnegative variables).

    Parameters are shifted by their box lows so the canonical nonnegative
    form applies; extra variables are appended on demand.
    """

    def __init__(self, sys_: _System):
        self.sys = sys_
        keys = sys_.free_keys + [("__group__", gi) for gi in range(len(sys_.q.mutable.ties))]
        self.keys = keys
        self.col = {k: t for t, k in enumerate(keys)}
        self.lo = np.array([self._box(k).lo for k in keys])
        self.width = np.array([self._box(k).width for k in keys])
        self.extra = []
        self.rows = []
        self.rhs = []
        self.cost_param = np.zeros(len(keys))
        self.cost_extra = []

    def _box(self, key):
        if key[0] == "__group__":
            return self.sys.q.mutable.ties[key[1]].box
        return self.sys.q.mutable.interval(key)

    def pterm(self, key):
        """(column, sign) in this LP for a mutable position key."""
        if key in self.sys.tied:
            gi, sign = self.sys.tied[key]
            return self.col[("__group__", gi)], sign
        return self.col[key], 1.0

    def new_extra(self, upper=np.inf, cost=0.0) -> int:
        self.extra.append(upper)
        self.cost_extra.append(cost)
        return len(self.keys) + len(self.extra) - 1

    def add(self, cols, vals, rhs):
        self.rows.append((list(cols), list(vals)))
        self.rhs.append(float(rhs))

    def solve(self):
        np_, ne = len(self.keys), len(self.extra)
        data, ri, ci = [], [], []
        rhs = np.array(self.rhs, dtype=float)
        for r, (cols, vals) in enumerate(self.rows):
            for c, d in zip(cols, vals):
                if d == 0.0:
                    continue
                data.append(d)
                ri.append(r)
                ci.append(c)
                if c < np_:
                    rhs[r] -= d * self.lo[c]  # shift p = lo + pt
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(self.rows), np_ + ne))
        cost = np.concatenate([self.cost_param, np.array(self.cost_extra)])
        upper = np.concatenate([self.width, np.array(self.extra)])
        sol = solve(LinearProgram(cost, A, rhs, upper))
        if sol.status != LpStatus.OPTIMAL:
            return None
        return np.concatenate([sol.x[:np_] + self.lo, sol.x[np_:]])

    def value_cols(self):
        return len(self.keys)


def _with_distance(plp: _ParamLp):
    """Append t >= |p - nominal| splits and put the t block in the cost."""
    sys_ = plp.sys
    for key in sys_.member_keys:
        col, sign = plp.pterm(key)
        nom = sys_.nominal_of(key)
        box = sys_.param_box(key)
        span = max(abs(sign * box.lo - nom), abs(sign * box.hi - nom))
        t = plp.new_extra(upper=span, cost=1.0)
        plp.add([t, col], [1.0, -sign], -nom)
        plp.add([t, col], [1.0, sign], nom)


def _repair_params(q: CeQuery, sys_: _System, xbar: np.ndarray,
                   y_fixed: np.ndarray, margin: float = 0.0,
                   margin_cols: Optional[set] = None,
                   upper_margin_cols: Optional[set] = None) -> Optional[Params]:
    """One fix-and-repair step: parameters making xbar optimal, nearest first.

    The point is frozen; row prices are frozen wherever a product with a
    mutable entry or rhs would otherwise appear, and free elsewhere.  With
    a positive margin, columns outside the support of xbar must keep a
    strictly positive reduced cost, and columns pinned at their upper bound
    a strictly negative one (uniqueness pushes for the strong case).
    """
    lp = q.lp
    n, m = sys_.n, sys_.m
    plp = _ParamLp(sys_)

    needs_fix = set()
    for key in sys_.member_keys:
        if key[0] == "entry":
            needs_fix.add(key[1])
        elif key[0] == "rhs":
            needs_fix.add(key[1])
    ycol = {}
    for i in range(m):
        if i not in needs_fix:
            ycol[i] = plp.new_extra(upper=sys_.bounds.y_max)
    vcol = {j: plp.new_extra(upper=sys_.bounds.y_max) for j in sys_.finite}

    def yterm(i):
        if i in ycol:
            return ycol[i], None
        return None, float(y_fixed[i])

    # primal rows at xbar
    for i in range(m):
        cols, vals = [], []
        rhs = 0.0
        for j, val, t in sys_._row_entries(i):
            if t is None:
                rhs -= val * float(xbar[j])
            else:
                pc, sign = plp.pterm(("entry", i, j))
                cols.append(pc)
                vals.append(sign * float(xbar[j]))
        bt = sys_.term(("rhs", i))
        if bt is None:
            rhs += float(lp.b[i])
        else:
            pc, sign = plp.pterm(("rhs", i))
            cols.append(pc)
            vals.append(-sign)
        plp.add(cols, vals, rhs)

    # dual feasibility, with margins on out-of-support and at-upper columns
    for j in range(n):
        cols, vals = [], []
        rhs = 0.0  # rows read: reduced cost of j (before bound duals) >= rhs
        ct = sys_.term(("cost", j))
        if ct is None:
            rhs -= float(lp.c[j])
        else:
            pc, sign = plp.pterm(("cost", j))
            cols.append(pc)
            vals.append(sign)
        for i, val, t in sys_._col_entries(j):
            if t is None:
                yc, yv = yterm(i)
                if yc is None:
                    rhs += val * yv
                else:
                    cols.append(yc)
                    vals.append(-val)
            else:
                pc, sign = plp.pterm(("entry", i, j))
                _, yv = yterm(i)
                # frozen price: the product is linear in the entry
                cols.append(pc)
                vals.append(-sign * float(yv))
        if margin_cols is not None and j in margin_cols:
            # strictly positive reduced cost, no bound dual involved
            plp.add(cols, vals, rhs + margin)
        if upper_margin_cols is not None and j in upper_margin_cols:
            # pinned at the upper bound: strictly negative reduced cost
            plp.add([c for c in cols], [-v for v in vals], margin - rhs)
        cols = list(cols)
        vals = list(vals)
        if j in vcol:
            cols.append(vcol[j])
            vals.append(1.0)
        plp.add(cols, vals, rhs)

    # duality gap at xbar: b'y - u'v - c'xbar >= -eps
    cols, vals = [], []
    rhs = -EPS_GAP
    for j in range(n):
        ct = sys_.term(("cost", j))
        if ct is None:
            rhs += float(lp.c[j]) * float(xbar[j])
        else:
            pc, sign = plp.pterm(("cost", j))
            cols.append(pc)
            vals.append(-sign * float(xbar[j]))
    for i in range(m):
        bt = sys_.term(("rhs", i))
        yc, yv = yterm(i)
        if bt is None:
            if yc is None:
                rhs -= float(lp.b[i]) * yv
            else:
                cols.append(yc)
                vals.append(float(lp.b[i]))
        else:
            pc, sign = plp.pterm(("rhs", i))
            if yc is None:
                cols.append(pc)
                vals.append(sign * yv)
            else:
                raise AssertionError("mutable rhs rows always freeze their price")
    for j, col in vcol.items():
        cols.append(col)
        vals.append(-float(lp.upper[j]))
    plp.add(cols, vals, rhs)

    _with_distance(plp)
    sol = plp.solve()
    if sol is None:
        return None
    vals = {k: sol[plp.col[k]] for k in plp.keys}
    lpn = q.lp
    c = lpn.c.copy()
    A = lpn.A.tolil(copy=True)
    b = lpn.b.copy()
    for key in sys_.member_keys:
        if key in sys_.tied:
            gi, sign = sys_.tied[key]
            val = sign * vals[("__group__", gi)]
        else:
            val = sys_.param_box(key).clamp(vals[key])
        if key[0] == "cost":
            c[key[1]] = val
        elif key[0] == "entry":
            A[key[1], key[2]] = val
        else:
            b[key[1]] = val
    return Params(c, A.tocsr(), b)


def _favored_vertices(q: CeQuery, samples: int = 12):
    """A handful of vertices of the favored-augmented nominal polyhedron.

    Objective directions each land on a vertex; deterministic pushes along
    the favored variables come first, then random directions; duplicates merge.
    """
    aug = q.augmented_lp()
    base = solve(aug)
    pts = []
    if base.status == LpStatus.OPTIMAL:
        pts.append(base.x)
    rng = np.random.default_rng(0)
    dirs = []
    fav = sorted({j for j, _, _ in q.favored.constraints})
    for j in fav:
        for s in (-1.0, 1.0):
            c = np.full(aug.num_vars, 0.01)  # park unpushed variables low
            c[j] = s
            dirs.append(c)
    if fav:
        c = np.full(aug.num_vars, 0.01)
        for j in fav:
            c[j] = -1.0  # push every favored variable up at once
        dirs.append(c)
    dirs += [rng.normal(size=aug.num_vars) for _ in range(samples)]
    for c in dirs:
        probe = solve(LinearProgram(c, aug.A, aug.b, aug.upper))
        if probe.status != LpStatus.OPTIMAL:
            continue
        x = probe.x
        if all(np.max(np.abs(x - p)) > 1e-7 for p in pts):
            pts.append(x)
    return pts


def _plain_prices(q: CeQuery, params: Params) -> Optional[np.ndarray]:
    sol = solve(params.as_lp(q.lp))
    if sol.status != LpStatus.OPTIMAL:
        return None
    return sol.y


def _weak_seeds(q: CeQuery, sys_: _System):
    """Repair-generated candidate parameters for the weak search."""
    out = []
    for xbar in _favored_vertices(q):
        y = _plain_prices(q, Params.nominal(q.lp))
        if y is None:
            continue
        p = _repair_params(q, sys_, xbar, y)
        if p is None:
            continue
        # one refresh round: prices of the repaired problem, then re-repair
        for _ in range(2):
            if verify_weak(q, p).passed:
                out.append(p)
                break
            y2 = _plain_prices(q, p)
            if y2 is None:
                break
            p2 = _repair_params(q, sys_, xbar, y2)
            if p2 is None:
                break
            p = p2
    return out


def _strong_seeds(q: CeQuery, sys_: _System):
    """Candidates for the strong search: uniqueness-repair plus box corners."""
    out = []
    cost_scale = 1.0 + float(np.abs(q.lp.c).max(initial=0.0))
    support_margin = MARGIN_SCALE * cost_scale
    n = q.lp.num_vars
    upper = q.lp.upper
    y0 = _plain_prices(q, Params.nominal(q.lp))
    for xbar in _favored_vertices(q):
        if y0 is None:
            break
        margin_cols = {j for j in range(n) if abs(xbar[j]) <= 1e-9}
        at_upper = {
            j for j in range(n)
            if np.isfinite(upper[j]) and xbar[j] >= upper[j] - 1e-9
        }
        # frozen nominal prices often pin an immutable column's reduced cost
        # at zero; slightly deflated prices open room for the margin
        for shrink in (1.0, 0.99, 0.95):
            y = shrink * y0
            for m0 in (support_margin, 10 * support_margin):
                p = _repair_params(q, sys_, xbar, y, margin=m0,
                                   margin_cols=margin_cols, upper_margin_cols=at_upper)
                for _ in range(3):
                    if p is None:
                        break
                    if verify_strong(q, p).passed:
                        out.append(p)
                        p = None
                        break
                    y2 = _plain_prices(q, p)
                    if y2 is None:
                        p = None
                        break
                    p = _repair_params(q, sys_, xbar, y2, margin=m0,
                                       margin_cols=margin_cols, upper_margin_cols=at_upper)
    # mutable-box corner samples, cheap to test
    rng = np.random.default_rng(1)
    corners = []
    for trial in range(16):
        vals = {}
        for key in sys_.member_keys:
            box = sys_.param_box(key)
            vals[key] = box.lo if rng.random() < 0.5 else box.hi
        corners.append(vals)
    for vals in corners:
        c = q.lp.c.copy()
        A = q.lp.A.tolil(copy=True)
        b = q.lp.b.copy()
        seen_groups = {}
        for key in sys_.member_keys:
            val = vals[key]
            if key in sys_.tied:
                gi, sign = sys_.tied[key]
                if gi not in seen_groups:
                    seen_groups[gi] = vals[key]  # first member picks the scalar
                val = sign * seen_groups[gi]
            if key[0] == "cost":
                c[key[1]] = val
            elif key[0] == "entry":
                A[key[1], key[2]] = val
            else:
                b[key[1]] = val
        p = Params(c, A.tocsr(), b)
        if verify_strong(q, p).passed:
            out.append(p)
    return out


# ----------------------------------------------------------------------- search


def _search(q: CeQuery, strong: bool, budget: Optional[BnbBudget],
            bounds: Optional[SearchBounds]) -> CeResult:
    _guard(q)
    kind = CeKind.STRONG if strong else CeKind.WEAK
    verifier = verify_strong if strong else verify_weak
    nominal = Params.nominal(q.lp)

    rep0 = verifier(q, nominal)
    if rep0.passed:
        aug = solve(q.augmented_lp())
        return CeResult(
            CeStatus.PROVEN, kind, nominal,
            witness=aug.x if aug.status == LpStatus.OPTIMAL else None,
            distance=0.0, objective=0.0, lower_bound=0.0,
            verification=rep0, stats={"zero_change": True},
        )

    # with frozen rows and demands, an unreachable favored region stays so
    ms = q.mutable
    rows_frozen = not ms.entries and not ms.rhs and all(
        key[0] == "cost" for g in ms.ties for key, _ in g.members
    )
    if rows_frozen:
        aug0 = solve(q.augmented_lp())
        if aug0.status == LpStatus.INFEASIBLE:
            return CeResult(
                CeStatus.INFEASIBLE, kind, verification=None,
                stats={"reason": "favored region infeasible under frozen rows"},
            )

    budget = budget or BnbBudget()
    bounds = bounds or SearchBounds()
    best = None
    res = None
    sys_ = None
    rounds = 0
    for rounds in range(1 + MAX_BOUND_GROWTH):
        sys_ = _System(q, bounds, strong)
        bp = sys_.bilinear()
        seeds = _strong_seeds(q, sys_) if strong else _weak_seeds(q, sys_)
        vecs = []
        for p in seeds:
            v = sys_.vector_of(p)
            if v is not None:
                vecs.append(v)
        seed_iter = iter(vecs)

        def polish(_v):
            return next(seed_iter, None)

        def accept(v):
            return verifier(q, sys_.params_of(v)).passed

        res = solve_spatial_bnb(bp, budget, polish=polish if vecs else None, accept=accept)
        grow = False
        if res.incumbent is not None:
            if best is None or res.objective < best[0]:
                best = (res.objective, sys_.params_of(res.incumbent), res)
            if sys_.suspect(res.incumbent):
                grow = True
        elif res.status == BnbStatus.INFEASIBLE:
            grow = True  # the artificial box may be cutting everything off
        if not grow or rounds == MAX_BOUND_GROWTH:
            break
        bounds = bounds.doubled()

    stats = {
        "nodes": res.node_count,
        "rounds": rounds + 1,
        "bounded_search": True,
        "bounds": {"x_max": bounds.x_max, "y_max": bounds.y_max, "dual_max": bounds.dual_max},
    }
    status = {
        BnbStatus.PROVEN: CeStatus.PROVEN,
        BnbStatus.INCUMBENT: CeStatus.INCUMBENT,
        BnbStatus.INFEASIBLE: CeStatus.INFEASIBLE,
        BnbStatus.BUDGET_EXHAUSTED: CeStatus.BUDGET_EXHAUSTED,
    }[res.status]

    if best is None:
        out = CeResult(status, kind, stats=stats)
        if np.isfinite(res.lower_bound):
            out.lower_bound = max(0.0, res.lower_bound)
        return out

    _, params, bres = best
    # judge bound proximity on a freshly derived vector when possible: raw
    # node vectors park unconstrained multipliers at box corners
    clean = sys_.vector_of(params)
    suspect = sys_.suspect(clean if clean is not None else bres.incumbent)
    if status == CeStatus.PROVEN and suspect:
        status = CeStatus.INCUMBENT
        stats["bound_suspect"] = True
    rep = verifier(q, params)
    if status == CeStatus.PROVEN and not rep.passed:
        status = CeStatus.INCUMBENT  # never claim a proof verification rejects
    aug = solve(q.augmented_lp(params))
    out = CeResult(
        status, kind, params,
        witness=aug.x if aug.status == LpStatus.OPTIMAL else None,
        distance=l1_change(params, nominal),
        objective=bres.objective,
        lower_bound=max(0.0, bres.lower_bound) if np.isfinite(bres.lower_bound) else None,
        verification=rep,
        stats=stats,
    )
    return out


def solve_wcep(q: CeQuery, budget: Optional[BnbBudget] = None,
               bounds: Optional[SearchBounds] = None) -> CeResult:
    """Search for a nearest weak explanation; incumbents are verified."""
    return _search(q, False, budget, bounds)


def solve_scep(q: CeQuery, budget: Optional[BnbBudget] = None,
               bounds: Optional[SearchBounds] = None) -> CeResult:
    """Search for a nearest strong explanation; incumbents are verified."""
    return _search(q, True, budget, bounds)
