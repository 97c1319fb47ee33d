"""Counterfactual query model: what may change, what is favored, how far is far.

A query bundles a present LP with its optimum, a favored region D for the
decision variables, a mutable space H of allowed parameter changes and a
distance specification.  Candidate explanations are parameter tuples
(c, A, b) inside H.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, MissingPoint, NoMutableParameters, ParseError
from .lp import LinearProgram, Polyhedron, with_constraints

INFINITE_PRICE = 1_000_000.0
ROUNDING_EPS = 1e-4


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise DimensionMismatch(f"bad interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, v: float, tol: float = 1e-9) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def clamp(self, v: float) -> float:
        return min(max(v, self.lo), self.hi)


def pm100(v: float) -> Interval:
    """The plus-or-minus 100 percent interval around a nominal value."""
    return Interval(v - abs(v), v + abs(v))


@dataclass(frozen=True)
class TieGroup:
    """Entries forced to share one scalar: value = sign * scalar for each member.

    Members are ("cost", col), ("entry", row, col) or ("rhs", row) keys paired
    with a sign; `box` bounds the shared scalar.
    """

    members: tuple
    box: Interval


@dataclass(frozen=True)
class MutableSpace:
    """Columnwise interval boxes; everything not listed is frozen at nominal."""

    cost: dict = field(default_factory=dict)  # col -> Interval
    entries: dict = field(default_factory=dict)  # (row, col) -> Interval
    rhs: dict = field(default_factory=dict)  # row -> Interval
    ties: tuple = ()  # TieGroup instances; break columnwise structure
    unsafe_columns: frozenset = frozenset()  # columns not known to live in x >= 0

    def is_empty(self) -> bool:
        return not (self.cost or self.entries or self.rhs or self.ties)

    def mutable_columns(self):
        cols = set(self.cost)
        cols.update(j for (_, j) in self.entries)
        return sorted(cols)

    def column_positions(self, j: int):
        """All mutable positions of column j as ("cost", j) / ("entry", i, j) keys."""
        pos = []
        if j in self.cost:
            pos.append(("cost", j))
        for (i, jj) in self.entries:
            if jj == j:
                pos.append(("entry", i, jj))
        return pos

    def interval(self, key) -> Interval:
        if key[0] == "cost":
            return self.cost[key[1]]
        if key[0] == "entry":
            return self.entries[(key[1], key[2])]
        return self.rhs[key[1]]

    def validate_against(self, lp: LinearProgram):
        A = lp.A.tocsc()
        for j, iv in self.cost.items():
            if not 0 <= j < lp.num_vars:
                raise DimensionMismatch(f"mutable cost column {j} out of range")
            if not iv.contains(lp.c[j]):
                raise DimensionMismatch(f"nominal c[{j}]={lp.c[j]} outside its interval")
        for (i, j), iv in self.entries.items():
            if not (0 <= i < lp.num_rows and 0 <= j < lp.num_vars):
                raise DimensionMismatch(f"mutable entry ({i}, {j}) out of range")
            if not iv.contains(A[i, j]):
                raise DimensionMismatch(f"nominal A[{i},{j}] outside its interval")
        for i, iv in self.rhs.items():
            if not 0 <= i < lp.num_rows:
                raise DimensionMismatch(f"mutable rhs row {i} out of range")
            if not iv.contains(lp.b[i]):
                raise DimensionMismatch(f"nominal b[{i}] outside its interval")


@dataclass(frozen=True)
class FavoredSpace:
    """Single-variable constraints x_j >= r or x_j <= r, plus optional box caps."""

    constraints: tuple = ()  # (col, sense, rhs) with sense "+" for >=, "-" for <=
    caps: dict = field(default_factory=dict)  # col -> cap value x_j <= cap

    def as_polyhedron(self, n: int) -> Polyhedron:
        rows, cols, vals, h = [], [], [], []
        r = 0
        for j, sense, rhs in self.constraints:
            rows.append(r)
            cols.append(j)
            if sense == "+":
                vals.append(-1.0)
                h.append(-rhs)
            else:
                vals.append(1.0)
                h.append(rhs)
            r += 1
        for j, cap in sorted(self.caps.items()):
            rows.append(r)
            cols.append(j)
            vals.append(1.0)
            h.append(cap)
            r += 1
        W = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))
        return Polyhedron(W, np.array(h))

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return self.as_polyhedron(x.size).contains(x, tol)


@dataclass(frozen=True)
class DistanceSpec:
    """Column norm plus cross-column aggregation."""

    norm: str = "l1"  # "l1" or "linf" within a column block
    aggregation: str = "sum"  # "sum", "max", "x_weighted" or "scaled_by_xhat"

    def __post_init__(self):
        if self.norm not in ("l1", "linf"):
            raise DimensionMismatch(f"unknown norm {self.norm!r}")
        if self.aggregation not in ("sum", "max", "x_weighted", "scaled_by_xhat"):
            raise DimensionMismatch(f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class Params:
    """One concrete parameter tuple (c, A, b)."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray

    @staticmethod
    def nominal(lp: LinearProgram) -> "Params":
        return Params(lp.c.copy(), lp.A.copy(), lp.b.copy())

    def as_lp(self, lp: LinearProgram) -> LinearProgram:
        """The perturbed problem: this tuple with the present bounds and names."""
        return LinearProgram(self.c, self.A, self.b, lp.upper, lp.names, lp.row_names)


class CeKind(Enum):
    RELATIVE = "relative"
    WEAK = "weak"
    STRONG = "strong"


class CeStatus(Enum):
    PROVEN = "proven"
    INCUMBENT = "incumbent"
    INFEASIBLE = "infeasible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class CeQuery:
    lp: LinearProgram
    xhat: np.ndarray
    favored: FavoredSpace
    mutable: MutableSpace
    alpha: float = 1.0
    dist: DistanceSpec = DistanceSpec()
    seed: Optional[int] = None
    model_ref: str = ""

    def __post_init__(self):
        xhat = np.asarray(self.xhat, dtype=float)
        if xhat.size != self.lp.num_vars:
            raise DimensionMismatch("xhat length does not match the problem")
        object.__setattr__(self, "xhat", xhat)
        self.mutable.validate_against(self.lp)
        for j, sense, rhs in self.favored.constraints:
            if not 0 <= j < self.lp.num_vars:
                raise DimensionMismatch(f"favored variable {j} out of range")
            if sense not in ("+", "-"):
                raise DimensionMismatch(f"favored sense must be '+' or '-', got {sense!r}")

    @property
    def vhat(self) -> float:
        return float(self.lp.c @ self.xhat)

    def favored_polyhedron(self) -> Polyhedron:
        return self.favored.as_polyhedron(self.lp.num_vars)

    def augmented_lp(self, params: Optional[Params] = None) -> LinearProgram:
        base = params.as_lp(self.lp) if params is not None else self.lp
        return with_constraints(base, self.favored_polyhedron())


@dataclass
class CeResult:
    status: CeStatus
    kind: CeKind
    candidate: Optional[Params] = None
    witness: Optional[np.ndarray] = None
    distance: Optional[float] = None  # unweighted l1 sum, always reported
    objective: Optional[float] = None  # the regime objective that was optimized
    lower_bound: Optional[float] = None
    verification: Optional[object] = None
    stats: dict = field(default_factory=dict)


# --------------------------------------------------------------------- distance


def _column_deltas(spec: DistanceSpec, candidate: Params, nominal: Params):
    dc = candidate.c - nominal.c
    dA = (candidate.A - nominal.A).tocsc()
    n = nominal.c.size
    deltas = np.zeros(n)
    for j in range(n):
        col = dA[:, j]
        block = np.abs(np.concatenate([[dc[j]], col.data]))
        deltas[j] = float(np.sum(block)) if spec.norm == "l1" else float(np.max(block))
    return deltas


def distance(
    spec: DistanceSpec,
    candidate: Params,
    nominal: Params,
    x: Optional[np.ndarray] = None,
) -> float:
    """Aggregated distance between two parameter tuples.

    The x-weighted and scaled-by-xhat aggregations need the point the
    weights come from; passing none raises MissingPoint.
    """
    if candidate.c.size != nominal.c.size or candidate.b.size != nominal.b.size:
        raise DimensionMismatch("parameter tuples have different shapes")
    db = np.abs(candidate.b - nominal.b)
    rhs_term = float(np.sum(db)) if spec.norm == "l1" else float(np.max(db, initial=0.0))

    if spec.aggregation == "scaled_by_xhat":
        if x is None:
            raise MissingPoint("scaled_by_xhat distance needs the reference point")
        scaled_c = Params(candidate.c * x, _scale_cols(candidate.A, x), candidate.b)
        scaled_n = Params(nominal.c * x, _scale_cols(nominal.A, x), nominal.b)
        deltas = _column_deltas(spec, scaled_c, scaled_n)
        return float(np.sum(deltas)) + rhs_term

    deltas = _column_deltas(spec, candidate, nominal)
    if spec.aggregation == "sum":
        return float(np.sum(deltas)) + rhs_term
    if spec.aggregation == "max":
        return float(np.max(deltas, initial=0.0)) + rhs_term
    if x is None:
        raise MissingPoint("x_weighted distance needs the point x")
    return float(np.sum(np.asarray(x) * deltas)) + rhs_term


def _scale_cols(A: sp.csr_matrix, x: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(A @ sp.diags(x))


def l1_change(candidate: Params, nominal: Params) -> float:
    """The unweighted l1 sum distance reported on every result."""
    return distance(DistanceSpec("l1", "sum"), candidate, nominal)


def changed_positions(candidate: Params, nominal: Params, tol: float = 1e-9):
    """List of (key, old, new) for entries that moved by more than tol."""
    out = []
    dc = candidate.c - nominal.c
    for j in np.where(np.abs(dc) > tol)[0]:
        out.append((("cost", int(j)), float(nominal.c[j]), float(candidate.c[j])))
    dA = sp.coo_matrix(candidate.A - nominal.A)
    An = nominal.A.tocsc()
    for i, j, v in zip(dA.row, dA.col, dA.data):
        if abs(v) > tol:
            old = float(An[i, j])
            out.append((("entry", int(i), int(j)), old, old + float(v)))
    db = candidate.b - nominal.b
    for i in np.where(np.abs(db) > tol)[0]:
        out.append((("rhs", int(i)), float(nominal.b[i]), float(candidate.b[i])))
    return out


# ----------------------------------------------------------------- diet problem

DIET_FOODS = ("beans", "rice", "wheat")
DIET_SUPPLIERS = ("s1", "s2")
_DIET_PRICES = {"s1": (800.0, 1003.0, 300.0), "s2": (1434.0, 1336.0, 500.0)}
_DIET_NUTRIENTS = {
    "energy": (335.0, 360.0, 330.0),
    "protein": (20.0, 7.0, 12.0),
    "fat": (1.0, 0.5, 2.0),
}
_DIET_DEMAND = {"energy": 2100.0, "protein": 52.5, "fat": 35.0}


def build_diet_reduced() -> LinearProgram:
    """The two-supplier three-food diet LP in 100 g units.

    Six purchase variables (three foods from each supplier), three
    nutrient demand rows, all purchases capped at 100 units.
    """
    names = tuple(f"{food}@{sup}" for sup in DIET_SUPPLIERS for food in DIET_FOODS)
    c = np.array([p for sup in DIET_SUPPLIERS for p in _DIET_PRICES[sup]])
    rows = []
    b = []
    for nutrient in ("energy", "protein", "fat"):
        per_food = _DIET_NUTRIENTS[nutrient]
        rows.append(list(per_food) * len(DIET_SUPPLIERS))
        b.append(_DIET_DEMAND[nutrient])
    A = sp.csr_matrix(np.array(rows))
    upper = np.full(6, 100.0)
    return LinearProgram(c, A, np.array(b), upper, names, ("energy", "protein", "fat"))


def encode_infinite_price(prices) -> np.ndarray:
    """Replace unavailable (infinite) prices by the 1,000,000 sentinel."""
    p = np.asarray(prices, dtype=float).copy()
    p[np.isinf(p)] = INFINITE_PRICE
    return p


def diet_query(mode: str = "prices", xhat: Optional[np.ndarray] = None) -> CeQuery:
    """The demo query: make buying some supplier-2 beans and rice worthwhile.

    mode "prices" lets only supplier-2 prices move (up to 100 percent);
    mode "prices+nutrients" frees the supplier-2 nutrient entries too.
    """
    if mode not in ("prices", "prices+nutrients"):
        raise ParseError(f"unknown diet demo mode {mode!r}")
    lp = build_diet_reduced()
    if xhat is None:
        from .lp import solve

        sol = solve(lp)
        xhat = sol.x
    beans2 = lp.var_index("beans@s2")
    rice2 = lp.var_index("rice@s2")
    favored = FavoredSpace(((beans2, "+", 1.0), (rice2, "+", 2.5)))
    cost = {j: pm100(lp.c[j]) for j in range(3, 6)}
    entries = {}
    if mode == "prices+nutrients":
        A = lp.A.toarray()
        entries = {(i, j): pm100(A[i, j]) for i in range(3) for j in range(3, 6)}
    mutable = MutableSpace(cost=cost, entries=entries)
    return CeQuery(lp, xhat, favored, mutable, alpha=1.0, model_ref="diet-reduced")


# ------------------------------------------------------------- query generation


def _fractional(v: float) -> bool:
    return abs(round(v) - v) > ROUNDING_EPS


def _off_decade(v: float) -> bool:
    a = abs(v)
    return a > 10.0 and abs(a - 10.0 * round(a / 10.0)) > ROUNDING_EPS


def _all_data_integer(lp: LinearProgram) -> bool:
    if np.any(np.abs(np.round(lp.c) - lp.c) > 1e-12):
        return False
    return not np.any(np.abs(np.round(lp.A.data) - lp.A.data) > 1e-12)


def default_cap(xhat: np.ndarray) -> float:
    return float(max(100.0, 10.0 * np.max(np.abs(xhat), initial=0.0)))


def generate_netlib_query(
    lp: LinearProgram,
    xhat: np.ndarray,
    seed: int,
    k: int,
    prior: Optional[list] = None,
    vmap=None,
) -> CeQuery:
    """Random favored region and mutable columns in the benchmark style.

    Three favored columns are pushed 5 percent away from their present
    value (or away from zero); k eligible columns donate their fractional
    parameters as mutable, nested across growing k for a fixed seed.
    """
    n = lp.num_vars
    rng = np.random.default_rng(seed)
    xhat = np.asarray(xhat, dtype=float)

    favored_cols = rng.choice(n, size=min(3, n), replace=False)
    constraints = []
    for j in favored_cols:
        j = int(j)
        u = lp.upper[j]
        if xhat[j] > 1e-8:
            lo_rhs = 1.05 * xhat[j]
            if lo_rhs <= u + 1e-12:
                constraints.append((j, "+", lo_rhs))
            else:
                constraints.append((j, "-", 0.95 * xhat[j]))
        else:
            if 0.05 <= u + 1e-12:
                constraints.append((j, "+", 0.05))
            else:
                constraints.append((j, "-", -0.05))
    caps = {}
    if not np.all(np.isfinite(lp.upper)):
        cap = default_cap(xhat)
        caps = {j: cap for j in range(n) if not np.isfinite(lp.upper[j])}
    favored = FavoredSpace(tuple(constraints), caps)

    if vmap is not None:
        eligible = [j for j in range(n) if not vmap.is_split(j) and vmap.original_lower(j) >= 0]
    else:
        eligible = list(range(n))
    if not eligible:
        raise NoMutableParameters("no columns with a nonnegative original domain")
    order = [int(j) for j in rng.permutation(eligible)]
    chosen = list(prior) if prior else []
    for j in order:
        if len(chosen) >= k:
            break
        if j not in chosen:
            chosen.append(j)

    test = _off_decade if _all_data_integer(lp) else _fractional
    A = lp.A.tocsc()
    cost = {}
    entries = {}
    for j in chosen:
        if test(lp.c[j]):
            cost[j] = pm100(lp.c[j])
        col = A[:, j]
        for pos in range(col.nnz):
            i = int(col.indices[pos])
            v = float(col.data[pos])
            if test(v):
                entries[(i, j)] = pm100(v)
    if not cost and not entries:
        raise NoMutableParameters(f"columns {chosen} carry no mutable parameters")

    mutable = MutableSpace(cost=cost, entries=entries)
    return CeQuery(
        lp,
        xhat,
        favored,
        mutable,
        alpha=1.0,
        seed=seed,
        model_ref="",
    )


# ------------------------------------------------------------------- query JSON

_QUERY_FIELDS = {"model", "alpha", "distance", "favored", "mutable", "seed"}


def query_to_json(q: CeQuery) -> dict:
    doc = {
        "model": q.model_ref or "",
        "alpha": q.alpha,
        "distance": {"norm": q.dist.norm, "aggregation": q.dist.aggregation},
        "favored": [
            {"var": (q.lp.names[j] if q.lp.names else j), "sense": ">=" if s == "+" else "<=", "rhs": r}
            for j, s, r in q.favored.constraints
        ],
        "mutable": [],
    }
    if q.seed is not None:
        doc["seed"] = q.seed
    by_col = {}
    for j, iv in q.mutable.cost.items():
        by_col.setdefault(j, []).append({"row": "obj", "lo": iv.lo, "hi": iv.hi})
    for (i, j), iv in q.mutable.entries.items():
        by_col.setdefault(j, []).append({"row": int(i), "lo": iv.lo, "hi": iv.hi})
    for j in sorted(by_col):
        name = q.lp.names[j] if q.lp.names else j
        doc["mutable"].append({"col": name, "entries": by_col[j]})
    return doc


def query_from_json(doc: dict, lp: LinearProgram, xhat: np.ndarray) -> CeQuery:
    """Build a CeQuery from the documented JSON shape; unknown fields are errors."""
    if not isinstance(doc, dict):
        raise ParseError("query document must be a JSON object")
    unknown = set(doc) - _QUERY_FIELDS
    if unknown:
        raise ParseError(f"unknown query fields: {sorted(unknown)}")
    alpha = float(doc.get("alpha", 1.0))
    dist_doc = doc.get("distance", {})
    if not isinstance(dist_doc, dict) or set(dist_doc) - {"norm", "aggregation"}:
        raise ParseError("distance must be an object with norm and aggregation")
    dist = DistanceSpec(dist_doc.get("norm", "l1"), dist_doc.get("aggregation", "sum"))

    constraints = []
    for item in doc.get("favored", []):
        if set(item) != {"var", "sense", "rhs"}:
            raise ParseError(f"favored entries need var, sense and rhs: {item}")
        j = lp.var_index(item["var"])
        if item["sense"] not in (">=", "<="):
            raise ParseError(f"favored sense must be '>=' or '<=', got {item['sense']!r}")
        constraints.append((j, "+" if item["sense"] == ">=" else "-", float(item["rhs"])))

    cost, entries = {}, {}
    for block in doc.get("mutable", []):
        if set(block) != {"col", "entries"}:
            raise ParseError(f"mutable blocks need col and entries: {block}")
        j = lp.var_index(block["col"])
        for e in block["entries"]:
            if set(e) != {"row", "lo", "hi"}:
                raise ParseError(f"mutable entries need row, lo and hi: {e}")
            iv = Interval(float(e["lo"]), float(e["hi"]))
            if e["row"] == "obj":
                cost[j] = iv
            else:
                i = int(e["row"])
                if not 0 <= i < lp.num_rows:
                    raise ParseError(f"mutable row {i} out of range")
                entries[(i, j)] = iv

    caps = {}
    if not np.all(np.isfinite(lp.upper)):
        cap = default_cap(np.asarray(xhat))
        caps = {j: cap for j in range(lp.num_vars) if not np.isfinite(lp.upper[j])}
    favored = FavoredSpace(tuple(constraints), caps)
    seed = doc.get("seed")
    return CeQuery(
        lp,
        xhat,
        favored,
        MutableSpace(cost=cost, entries=entries),
        alpha=alpha,
        dist=dist,
        seed=int(seed) if seed is not None else None,
        model_ref=str(doc.get("model", "")),
    )


def load_query_file(path: str):
    """Read a query JSON file; returns (doc, model_ref)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"query file {path}: {exc}") from None
    if not isinstance(doc, dict) or "model" not in doc:
        raise ParseError("query file must be an object with a model field")
    return doc, str(doc["model"])
