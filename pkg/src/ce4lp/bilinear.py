"""Global solver for linear programs with bilinear equality terms.

Problems carry boxed variables v, auxiliary variables z_k tied to products
v_i * v_j, and linear rows/objective over both.  McCormick envelopes give a
node relaxation; spatial branch-and-bound splits operand boxes until the
products are honest.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NumericalFailure, UnboundedOperand
from .lp import LinearProgram, LpStatus, solve

VIOLATION_TOL = 1e-6
PROOF_RECHECK_TOL = 1e-8
LINEAR_FEAS_TOL = 1e-7


@dataclass(frozen=True)
class BilinearProgram:
    """min q'v + r'z  s.t.  G v + H z >= g,  lo <= v <= hi,  z_k = v_i v_j."""

    q: np.ndarray
    r: np.ndarray
    G: sp.csr_matrix
    H: sp.csr_matrix
    g: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    products: tuple  # (i, j) per z_k, aligned with r / H columns
    names: Optional[tuple] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        g = np.asarray(self.g, dtype=float)
        G = sp.csr_matrix(self.G)
        H = sp.csr_matrix(self.H)
        for nm, val in (("q", q), ("r", r), ("lo", lo), ("hi", hi), ("g", g), ("G", G), ("H", H)):
            object.__setattr__(self, nm, val)
        n, p = q.size, r.size
        if lo.size != n or hi.size != n:
            raise DimensionMismatch("boxes do not match the variable count")
        if G.shape != (g.size, n) or H.shape != (g.size, p):
            raise DimensionMismatch("linear rows do not match the variable layout")
        if len(self.products) != p:
            raise DimensionMismatch("product list does not match the z count")
        if np.any(lo > hi + 1e-12):
            raise DimensionMismatch("empty variable box")
        operands = {i for pair in self.products for i in pair}
        for i in operands:
            if not (0 <= i < n):
                raise DimensionMismatch(f"product operand {i} out of range")
            if not (np.isfinite(lo[i]) and np.isfinite(hi[i])):
                raise UnboundedOperand(f"product operand {i} needs a finite box")

    @property
    def num_vars(self) -> int:
        return self.q.size

    @property
    def num_products(self) -> int:
        return self.r.size

    def product_values(self, v: np.ndarray) -> np.ndarray:
        return np.array([v[i] * v[j] for i, j in self.products])

    def objective(self, v: np.ndarray, z: Optional[np.ndarray] = None) -> float:
        if z is None:
            z = self.product_values(v)
        return float(self.q @ v + self.r @ z)

    def linear_violation(self, v: np.ndarray, z: np.ndarray) -> float:
        if self.g.size == 0:
            return 0.0
        res = self.g - (self.G @ v + self.H @ z)
        return float(np.max(res, initial=0.0))


class BnbStatus(Enum):
    PROVEN = "proven"
    INCUMBENT = "incumbent"
    INFEASIBLE = "infeasible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class BnbBudget:
    max_nodes: int = 100_000
    max_seconds: float = 60.0
    gap_tol: float = 1e-6
    violation_tol: float = VIOLATION_TOL
    queue_cap: int = 50_000


@dataclass
class BnbResult:
    status: BnbStatus
    incumbent: Optional[np.ndarray] = None  # v only; z follows from the products
    objective: Optional[float] = None
    lower_bound: float = -np.inf
    gap: float = np.inf
    node_count: int = 0
    stats: dict = field(default_factory=dict)


def product_boxes(bp: BilinearProgram, lo: np.ndarray, hi: np.ndarray):
    """Interval bounds of each product over the current boxes (corner extremes)."""
    zlo = np.empty(bp.num_products)
    zhi = np.empty(bp.num_products)
    for k, (i, j) in enumerate(bp.products):
        if i == j:
            ends = np.array([lo[i] * lo[i], hi[i] * hi[i]])
            zhi[k] = ends.max()
            zlo[k] = 0.0 if lo[i] <= 0.0 <= hi[i] else ends.min()
        else:
            corners = np.array([lo[i] * lo[j], lo[i] * hi[j], hi[i] * lo[j], hi[i] * hi[j]])
            zlo[k] = corners.min()
            zhi[k] = corners.max()
    return zlo, zhi


def mccormick_relax(bp: BilinearProgram, lo: np.ndarray, hi: np.ndarray) -> LinearProgram:
    """Node relaxation as a canonical LP over offsets from the lower box corner.

    Variables are (v - lo, z - zlo) so everything is nonnegative; callers add
    q'lo + r'zlo back to the reported objective value.
    """
    ops = _operands(bp)
    if ops.size and not (np.all(np.isfinite(lo[ops])) and np.all(np.isfinite(hi[ops]))):
        raise UnboundedOperand("node boxes must be finite on product operands")
    n, p = bp.num_vars, bp.num_products
    zlo, zhi = product_boxes(bp, lo, hi)

    rows = [sp.hstack([bp.G, bp.H], format="csr")] if bp.g.size else []
    rhs = [bp.g] if bp.g.size else []
    data, ri, ci, mrhs = [], [], [], []
    row = 0
    for k, (i, j) in enumerate(bp.products):
        li, ui = lo[i], hi[i]
        lj, uj = lo[j], hi[j]
        zc = n + k
        for coef_z, coef_i, coef_j, bound in (
            (1.0, -lj, -li, -li * lj),  # z >= lj v_i + li v_j - li lj
            (1.0, -uj, -ui, -ui * uj),  # z >= uj v_i + ui v_j - ui uj
            (-1.0, uj, li, li * uj),  # z <= uj v_i + li v_j - li uj
            (-1.0, lj, ui, ui * lj),  # z <= lj v_i + ui v_j - ui lj
        ):
            ri += [row, row, row]
            ci += [zc, i, j]
            data += [coef_z, coef_i, coef_j]
            mrhs.append(bound)
            row += 1
    if row:
        rows.append(sp.csr_matrix((data, (ri, ci)), shape=(row, n + p)))
        rhs.append(np.array(mrhs))
    A = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, n + p))
    b = np.concatenate(rhs) if rhs else np.zeros(0)

    origin = np.concatenate([lo, zlo])
    if not np.all(np.isfinite(origin)):
        raise UnboundedOperand("variables without finite lower bounds cannot be shifted")
    b = b - A @ origin
    cost = np.concatenate([bp.q, bp.r])
    width = np.concatenate([hi - lo, zhi - zlo])
    return LinearProgram(cost, A, b, np.maximum(width, 0.0))


def node_origin_value(bp: BilinearProgram, lo: np.ndarray, hi: np.ndarray) -> float:
    zlo, _ = product_boxes(bp, lo, hi)
    return float(bp.q @ lo + bp.r @ zlo)


def _operands(bp: BilinearProgram) -> np.ndarray:
    return np.array(sorted({i for pair in bp.products for i in pair}), dtype=int)


@dataclass(order=True)
class _Node:
    bound: float
    counter: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)


def solve_spatial_bnb(
    bp: BilinearProgram,
    budget: Optional[BnbBudget] = None,
    polish: Optional[Callable] = None,
    accept: Optional[Callable] = None,
) -> BnbResult:
    """Best-first spatial branch-and-bound over the operand boxes.

    polish(v) may propose an alternative candidate vector for the incumbent;
    accept(v) may veto a candidate, in which case the node is re-branched
    instead of fathomed.  stats carries the dequeued-bound trace for audit.
    """
    budget = budget or BnbBudget()
    start = time.monotonic()
    inc_v: Optional[np.ndarray] = None
    inc_z: Optional[np.ndarray] = None
    inc_obj = np.inf
    evicted_lb = np.inf
    abandoned_lb = np.inf
    trace: list = []
    nodes_done = 0
    counter = 0
    g_scale = 1.0 + float(np.abs(bp.g).max(initial=0.0))

    def try_candidate(v: np.ndarray) -> str:
        nonlocal inc_v, inc_z, inc_obj
        v = np.clip(v, bp.lo, bp.hi)
        z = bp.product_values(v)
        if bp.linear_violation(v, z) > LINEAR_FEAS_TOL * g_scale:
            return "infeasible"
        if accept is not None and not accept(v):
            return "vetoed"
        obj = bp.objective(v, z)
        if obj < inc_obj - 1e-12:
            inc_v, inc_z, inc_obj = v.copy(), z, obj
            return "accepted"
        return "no_improve"

    def result(status: BnbStatus, lb: float) -> BnbResult:
        if inc_v is not None:
            lb = min(lb, inc_obj)  # a feasible point always caps the optimum
        gap = _gap(inc_obj, lb)
        if status == BnbStatus.PROVEN:
            recheck = float(np.max(np.abs(inc_z - bp.product_values(inc_v)), initial=0.0))
            if recheck > PROOF_RECHECK_TOL or gap > budget.gap_tol:
                status = BnbStatus.INCUMBENT
        return BnbResult(
            status,
            incumbent=None if inc_v is None else inc_v.copy(),
            objective=None if inc_v is None else inc_obj,
            lower_bound=lb,
            gap=gap,
            node_count=nodes_done,
            stats={
                "trace": trace,
                "evicted": bool(np.isfinite(evicted_lb)),
                "abandoned": bool(np.isfinite(abandoned_lb)),
            },
        )

    root_lp = mccormick_relax(bp, bp.lo, bp.hi)
    root_sol = solve(root_lp)
    if root_sol.status == LpStatus.INFEASIBLE:
        return BnbResult(BnbStatus.INFEASIBLE, node_count=1, stats={"trace": []})
    if root_sol.status == LpStatus.UNBOUNDED:
        raise NumericalFailure("root relaxation unbounded; box every variable")
    root_bound = root_sol.objective + node_origin_value(bp, bp.lo, bp.hi)
    heap = [_Node(root_bound, counter, bp.lo.copy(), bp.hi.copy())]
    counter += 1

    while heap:
        if nodes_done >= budget.max_nodes or time.monotonic() - start > budget.max_seconds:
            lb = min(min(nd.bound for nd in heap), evicted_lb, abandoned_lb)
            status = BnbStatus.INCUMBENT if inc_v is not None else BnbStatus.BUDGET_EXHAUSTED
            if inc_v is not None and _gap(inc_obj, lb) <= budget.gap_tol:
                status = BnbStatus.PROVEN
            return result(status, lb)
        node = heapq.heappop(heap)
        nodes_done += 1
        trace.append(node.bound)
        fathom_level = inc_obj - budget.gap_tol * (1.0 + abs(inc_obj))
        if node.bound >= fathom_level:
            continue
        try:
            sol = solve(mccormick_relax(bp, node.lo, node.hi))
        except NumericalFailure:
            # thin boxes can defeat the node solve; keep its bound honest
            abandoned_lb = min(abandoned_lb, node.bound)
            continue
        if sol.status == LpStatus.INFEASIBLE:
            continue
        if sol.status != LpStatus.OPTIMAL:
            raise NumericalFailure(f"node relaxation came back {sol.status.name}")
        bound = max(node.bound, sol.objective + node_origin_value(bp, node.lo, node.hi))
        if bound >= fathom_level:
            continue
        zlo, _ = product_boxes(bp, node.lo, node.hi)
        v = sol.x[: bp.num_vars] + node.lo
        z_lp = sol.x[bp.num_vars :] + zlo
        viol = np.abs(z_lp - bp.product_values(v))
        worst = float(viol.max(initial=0.0))

        if polish is not None:
            pv = polish(v)
            if pv is not None:
                try_candidate(np.asarray(pv, dtype=float))

        if worst <= budget.violation_tol:
            outcome = try_candidate(v)
            if outcome in ("accepted", "no_improve"):
                continue  # this node is solved to its own optimum
            # vetoed or numerically infeasible at exact products: split further

        if viol.size == 0:
            continue  # product-free problem is settled at the root
        k = int(np.argmax(viol))
        i, j = bp.products[k]
        wi = node.hi[i] - node.lo[i]
        wj = node.hi[j] - node.lo[j]
        if max(wi, wj) < 1e-11:
            # cannot split a point box; give up on this region
            abandoned_lb = min(abandoned_lb, bound)
            continue
        op = i if (wi * abs(v[j]), wi) >= (wj * abs(v[i]), wj) else j
        if node.hi[op] - node.lo[op] < 1e-11:
            op = j if op == i else i
        width = node.hi[op] - node.lo[op]
        point = float(np.clip(v[op], node.lo[op] + 0.1 * width, node.hi[op] - 0.1 * width))
        if not np.isfinite(point):
            point = 0.5 * (node.lo[op] + node.hi[op])
        for side in (0, 1):
            nlo, nhi = node.lo.copy(), node.hi.copy()
            if side == 0:
                nhi[op] = point
            else:
                nlo[op] = point
            heapq.heappush(heap, _Node(bound, counter, nlo, nhi))
            counter += 1
        while len(heap) > budget.queue_cap and inc_v is not None:
            worst_at = max(range(len(heap)), key=lambda t: heap[t].bound)
            evicted_lb = min(evicted_lb, heap[worst_at].bound)
            heap[worst_at] = heap[-1]
            heap.pop()
            heapq.heapify(heap)

    # tree exhausted
    if inc_v is None:
        if np.isfinite(abandoned_lb) or np.isfinite(evicted_lb):
            return result(BnbStatus.BUDGET_EXHAUSTED, min(abandoned_lb, evicted_lb))
        return result(BnbStatus.INFEASIBLE, np.inf)
    lb = min(inc_obj, evicted_lb, abandoned_lb)
    status = BnbStatus.PROVEN if _gap(inc_obj, lb) <= budget.gap_tol else BnbStatus.INCUMBENT
    return result(status, lb)


def _gap(inc_obj: float, lb: float) -> float:
    if not np.isfinite(inc_obj):
        return np.inf
    return max(0.0, (inc_obj - lb) / (1.0 + abs(inc_obj)))
