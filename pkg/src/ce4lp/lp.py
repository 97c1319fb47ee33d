"""Canonical linear programs and a certificate-producing simplex solver.

The canonical form used everywhere in this package is

    min  c'x   s.t.   A x >= b,   0 <= x <= u,

where u may be +inf componentwise.  Upper bounds are part of the problem
data, never emulated with big-M rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _as_float_array(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {a.shape}")
    return a


def _as_csr(M, m: int, n: int, name: str) -> sp.csr_matrix:
    A = sp.csr_matrix(M, dtype=float) if not sp.issparse(M) else sp.csr_matrix(M).astype(float)
    if A.shape != (m, n):
        raise DimensionMismatch(f"{name} has shape {A.shape}, expected {(m, n)}")
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


@dataclass(frozen=True)
class LinearProgram:
    """Immutable LP data in canonical min / >= / box form."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    upper: Optional[np.ndarray] = None
    names: Optional[tuple] = None
    row_names: Optional[tuple] = None

    def __post_init__(self):
        c = _as_float_array(self.c, "c")
        b = _as_float_array(self.b, "b")
        A = _as_csr(self.A, b.size, c.size, "A")
        if self.upper is None:
            u = np.full(c.size, np.inf)
        else:
            u = _as_float_array(self.upper, "upper")
            if u.size != c.size:
                raise DimensionMismatch("upper and c differ in length")
            if np.any(u < 0):
                raise DimensionMismatch("upper bounds must be nonnegative")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
            raise DimensionMismatch("c and b must be finite")
        if self.names is not None and len(self.names) != c.size:
            raise DimensionMismatch("names and c differ in length")
        if self.row_names is not None and len(self.row_names) != b.size:
            raise DimensionMismatch("row_names and b differ in length")
        for arr in (c, b, u):
            arr.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "upper", u)

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.b.size

    def var_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            j = int(name)
            if not 0 <= j < self.num_vars:
                raise DimensionMismatch(f"variable index {j} out of range")
            return j
        if self.names is None:
            raise DimensionMismatch("problem has no variable names")
        try:
            return self.names.index(name)
        except ValueError:
            raise DimensionMismatch(f"unknown variable {name!r}") from None


@dataclass(frozen=True)
class Polyhedron:
    """A system W x <= h used for favored regions and extra cuts."""

    W: sp.csr_matrix
    h: np.ndarray

    def __post_init__(self):
        h = _as_float_array(self.h, "h")
        W = sp.csr_matrix(self.W, dtype=float)
        if W.shape[0] != h.size:
            raise DimensionMismatch("W and h differ in row count")
        h.flags.writeable = False
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "h", h)

    @property
    def num_rows(self) -> int:
        return self.h.size

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        if self.num_rows == 0:
            return True
        return bool(np.all(self.W @ x <= self.h + tol * (1.0 + np.abs(self.h))))


@dataclass
class LpSolution:
    status: LpStatus
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    objective: Optional[float] = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)


@dataclass
class CertificateReport:
    primal_violation: float
    dual_violation: float
    relative_gap: float
    passed: bool


def solve(lp: LinearProgram) -> LpSolution:
    """Solve an LP, returning primal and dual values when optimal.

    Infeasible results carry a Farkas ray in residuals["farkas_ray"];
    unbounded results carry an improving direction in
    residuals["unbounded_direction"].
    """
    from .simplex import simplex_solve

    return simplex_solve(lp)


def check_certificate(lp: LinearProgram, sol: LpSolution, tol: float = 1e-6) -> CertificateReport:
    """Validate an Optimal solution against its own dual certificate.

    The implied dual is  max b'y - u'v  with  A'y - v <= c,  y, v >= 0 and
    v supported on finitely bounded variables; given y the best such v is
    recovered in closed form, so the report only depends on (x, y).
    """
    if sol.status != LpStatus.OPTIMAL or sol.x is None or sol.y is None:
        return CertificateReport(np.inf, np.inf, np.inf, False)
    x, y = sol.x, sol.y
    if x.size != lp.num_vars or y.size != lp.num_rows:
        raise DimensionMismatch("solution shapes do not match the problem")

    row_resid = lp.b - lp.A @ x if lp.num_rows else np.zeros(0)
    primal = 0.0
    if lp.num_rows:
        primal = max(primal, float(np.max(row_resid)))
    primal = max(primal, float(np.max(-x, initial=0.0)))
    finite = np.isfinite(lp.upper)
    if np.any(finite):
        primal = max(primal, float(np.max(x[finite] - lp.upper[finite], initial=0.0)))

    aty = lp.A.T @ y if lp.num_rows else np.zeros(lp.num_vars)
    rc = lp.c - aty
    dual = float(np.max(-y, initial=0.0))
    # Variables without a finite upper bound admit no bound dual, so their
    # reduced cost must be nonnegative.
    if np.any(~finite):
        dual = max(dual, float(np.max(-rc[~finite], initial=0.0)))
    v = np.where(finite, np.maximum(0.0, -rc), 0.0)
    dual_obj = float(lp.b @ y) - float(lp.upper[finite] @ v[finite]) if np.any(finite) else float(lp.b @ y)
    pobj = float(lp.c @ x)
    gap = abs(pobj - dual_obj) / (1.0 + abs(pobj))
    passed = primal <= tol and dual <= tol and gap <= tol
    return CertificateReport(primal, dual, gap, passed)


def with_constraints(lp: LinearProgram, extra: Polyhedron) -> LinearProgram:
    """Return a new LP with the rows of `extra` (W x <= h) appended as -W x >= -h."""
    if extra.W.shape[1] != lp.num_vars:
        raise DimensionMismatch("extra constraints have the wrong number of columns")
    if extra.num_rows == 0:
        return lp
    A = sp.vstack([lp.A, -extra.W], format="csr")
    b = np.concatenate([lp.b, -extra.h])
    row_names = None
    if lp.row_names is not None:
        row_names = tuple(lp.row_names) + tuple(f"cut{i}" for i in range(extra.num_rows))
    return LinearProgram(lp.c, A, b, lp.upper, lp.names, row_names)
