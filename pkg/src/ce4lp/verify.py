"""Independent verification of candidate explanations.

Each verifier re-solves the perturbed problem from scratch and checks the
defining property of its explanation kind, so a search bug cannot certify
its own output.  All three also confirm the candidate stayed inside the
allowed parameter boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .lp import LinearProgram, LpStatus, solve, with_constraints
from .model import CeKind, CeQuery, Params, changed_positions

EPS_GAP = 1e-7


@dataclass
class VerificationReport:
    kind: CeKind
    passed: bool
    reason: str = ""
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed


def value_at(params: Params, key) -> float:
    if key[0] == "cost":
        return float(params.c[key[1]])
    if key[0] == "entry":
        return float(params.A[key[1], key[2]])
    return float(params.b[key[1]])


def check_in_mutable_space(q: CeQuery, params: Params, tol: float = 1e-7):
    """Is the candidate tuple inside H: boxes respected, frozen entries frozen."""
    nominal = Params.nominal(q.lp)
    ms = q.mutable
    tied = set()
    for g in ms.ties:
        tied.update(key for key, _ in g.members)
    for key, old, new in changed_positions(params, nominal, tol):
        if key in tied:
            continue
        if key[0] == "cost" and key[1] in ms.cost:
            if not ms.cost[key[1]].contains(new, tol):
                return False, f"c[{key[1]}]={new} outside its box"
        elif key[0] == "entry" and (key[1], key[2]) in ms.entries:
            if not ms.entries[(key[1], key[2])].contains(new, tol):
                return False, f"A[{key[1]},{key[2]}]={new} outside its box"
        elif key[0] == "rhs" and key[1] in ms.rhs:
            if not ms.rhs[key[1]].contains(new, tol):
                return False, f"b[{key[1]}]={new} outside its box"
        else:
            return False, f"frozen position {key} changed from {old} to {new}"
    for g in ms.ties:
        scalar = None
        for key, sign in g.members:
            v = value_at(params, key) * sign
            if scalar is None:
                scalar = v
            elif abs(v - scalar) > tol * (1.0 + abs(scalar)):
                return False, f"tied positions disagree: {g.members}"
        if scalar is not None and not g.box.contains(scalar, tol):
            return False, f"tie scalar {scalar} outside its box"
    return True, ""


def verify_relative(q: CeQuery, params: Params, tol: float = 1e-6) -> VerificationReport:
    """Does some favored feasible point cost at most alpha times the present value?"""
    ok, why = check_in_mutable_space(q, params)
    if not ok:
        return VerificationReport(CeKind.RELATIVE, False, why)
    target = q.alpha * q.vhat
    aug = q.augmented_lp(params)
    sol = solve(aug)
    details = {"target": target, "status": sol.status.name}
    if sol.status == LpStatus.UNBOUNDED:
        return VerificationReport(CeKind.RELATIVE, True, "favored problem unbounded below", details)
    if sol.status != LpStatus.OPTIMAL:
        return VerificationReport(CeKind.RELATIVE, False, "no feasible favored point", details)
    details["favored_optimum"] = sol.objective
    slack = target - sol.objective + tol * (1.0 + abs(target))
    if slack < 0:
        return VerificationReport(
            CeKind.RELATIVE, False, f"cheapest favored point {sol.objective} exceeds {target}", details
        )
    return VerificationReport(CeKind.RELATIVE, True, "", details)


def verify_weak(q: CeQuery, params: Params, tol: float = 1e-6) -> VerificationReport:
    """Does some exactly-optimal solution of the perturbed problem lie in D?"""
    ok, why = check_in_mutable_space(q, params)
    if not ok:
        return VerificationReport(CeKind.WEAK, False, why)
    plain = solve(params.as_lp(q.lp))
    details = {"plain_status": plain.status.name}
    if plain.status != LpStatus.OPTIMAL:
        return VerificationReport(CeKind.WEAK, False, "perturbed problem has no optimum", details)
    aug = solve(q.augmented_lp(params))
    details["aug_status"] = aug.status.name
    details["plain_objective"] = plain.objective
    if aug.status != LpStatus.OPTIMAL:
        return VerificationReport(CeKind.WEAK, False, "no feasible favored point", details)
    details["aug_objective"] = aug.objective
    gap = aug.objective - plain.objective
    details["gap"] = gap
    if abs(gap) > tol * (1.0 + abs(plain.objective)):
        return VerificationReport(
            CeKind.WEAK, False, f"favored optimum off by {gap} from the true optimum", details
        )
    return VerificationReport(CeKind.WEAK, True, "", details)


def _optimal_face_lp(lp: LinearProgram, objective_x: np.ndarray, eps_gap: float) -> LinearProgram:
    """min objective_x'x over primal-dual pairs forced to (near) zero gap.

    Variables are (x, y, v): primal point, row duals, upper-bound duals for
    the finitely capped columns.  The gap row folds the caps into the rhs.
    """
    m, n = lp.A.shape
    finite = np.where(np.isfinite(lp.upper))[0]
    f = finite.size
    A = lp.A.tocsr()
    # column blocks: x (n), y (m), v (f)
    rows = []
    rhs = []
    # primal feasibility Ax >= b
    rows.append(sp.hstack([A, sp.csr_matrix((m, m + f))], format="csr"))
    rhs.append(lp.b)
    # dual feasibility A'y - v <= c, as -A'y + v >= -c
    scatter = sp.csr_matrix(
        (np.ones(f), (finite, np.arange(f))), shape=(n, f)
    )
    rows.append(sp.hstack([sp.csr_matrix((n, n)), -A.T.tocsr(), scatter], format="csr"))
    rhs.append(-lp.c)
    # zero gap: c'x - b'y + u'v <= eps, as -c'x + b'y - u'v >= -eps
    u_fin = lp.upper[finite]
    gap = sp.hstack(
        [sp.csr_matrix(-lp.c), sp.csr_matrix(lp.b), sp.csr_matrix(-u_fin)], format="csr"
    )
    rows.append(gap)
    rhs.append(np.array([-eps_gap]))
    big_A = sp.vstack(rows, format="csr")
    big_b = np.concatenate(rhs)
    cost = np.concatenate([objective_x, np.zeros(m + f)])
    upper = np.concatenate([lp.upper, np.full(m + f, np.inf)])
    return LinearProgram(cost, big_A, big_b, upper)


def verify_strong(
    q: CeQuery,
    params: Params,
    tol: float = 1e-6,
    eps_gap: float = EPS_GAP,
) -> VerificationReport:
    """Does every optimal solution of the perturbed problem lie in D?

    First the plain optimum is checked as a cheap counterexample probe, then
    each favored halfspace is stress-tested against the whole optimal face.
    """
    ok, why = check_in_mutable_space(q, params)
    if not ok:
        return VerificationReport(CeKind.STRONG, False, why)
    lp = params.as_lp(q.lp)
    plain = solve(lp)
    details = {"plain_status": plain.status.name}
    if plain.status != LpStatus.OPTIMAL:
        return VerificationReport(CeKind.STRONG, False, "perturbed problem has no optimum", details)
    poly = q.favored_polyhedron()
    slack = poly.W @ plain.x - poly.h
    if np.max(slack, initial=-np.inf) > tol:
        details["violated_row"] = int(np.argmax(slack))
        return VerificationReport(
            CeKind.STRONG, False, "an optimal solution already sits outside D", details
        )
    # optimal face sweep: maximize each favored row over all optimal solutions
    W = poly.W.tocsr()
    worst = []
    for k in range(W.shape[0]):
        wk = np.asarray(W[k, :].todense()).ravel()
        face = _optimal_face_lp(lp, -wk, eps_gap)
        sol = solve(face)
        if sol.status == LpStatus.UNBOUNDED:
            details["row"] = k
            return VerificationReport(
                CeKind.STRONG, False, f"favored row {k} unbounded over the optimal face", details
            )
        if sol.status != LpStatus.OPTIMAL:
            details["row"] = k
            return VerificationReport(
                CeKind.STRONG, False, f"optimal face probe for row {k} failed ({sol.status.name})", details
            )
        attained = -sol.objective
        worst.append(attained - poly.h[k])
        if attained > poly.h[k] + tol * (1.0 + abs(poly.h[k])):
            details["row"] = k
            details["attained"] = attained
            details["bound"] = float(poly.h[k])
            return VerificationReport(
                CeKind.STRONG, False, f"optimal face leaves D through row {k}", details
            )
    details["worst_slack"] = max(worst) if worst else -np.inf
    return VerificationReport(CeKind.STRONG, True, "", details)


def verify(q: CeQuery, kind: CeKind, params: Params, tol: float = 1e-6) -> VerificationReport:
    if kind == CeKind.RELATIVE:
        return verify_relative(q, params, tol)
    if kind == CeKind.WEAK:
        return verify_weak(q, params, tol)
    return verify_strong(q, params, tol)
