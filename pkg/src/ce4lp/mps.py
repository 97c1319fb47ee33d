"""MPS reading, writing and canonicalization.

Free-format MPS in the classic NETLIB dialect: sections NAME, ROWS,
COLUMNS, RHS, RANGES, BOUNDS, ENDATA, whitespace tokenization, section
keywords recognized only at column 1.  Integer markers and binary bound
types are rejected rather than silently mishandled.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, UnsupportedFeature
from .lp import LinearProgram

_SECTIONS = {"NAME", "OBJSENSE", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"}
_BOUND_TYPES = {"UP", "LO", "FX", "FR", "MI", "PL"}
_REJECTED_BOUNDS = {"BV", "UI", "LI", "SC"}


@dataclass
class GeneralLp:
    """Row/column form as read from an MPS file, before canonicalization."""

    name: str = ""
    minimize: bool = True
    objective_name: str = ""
    row_names: list = field(default_factory=list)
    row_senses: list = field(default_factory=list)  # 'G', 'L' or 'E'
    col_names: list = field(default_factory=list)
    entries: dict = field(default_factory=dict)  # (row_idx, col_idx) -> value
    obj_entries: dict = field(default_factory=dict)  # col_idx -> value
    rhs: dict = field(default_factory=dict)  # row_idx -> value
    ranges: dict = field(default_factory=dict)  # row_idx -> value
    lower: dict = field(default_factory=dict)  # col_idx -> value (default 0)
    upper: dict = field(default_factory=dict)  # col_idx -> value (default +inf)
    objective_rhs: float = 0.0

    @property
    def num_rows(self) -> int:
        return len(self.row_names)

    @property
    def num_cols(self) -> int:
        return len(self.col_names)

    def col_bounds(self, j: int):
        return self.lower.get(j, 0.0), self.upper.get(j, np.inf)

    def row_interval(self, i: int):
        """Activity interval [lo, hi] implied by sense, rhs and range."""
        b = self.rhs.get(i, 0.0)
        sense = self.row_senses[i]
        r = self.ranges.get(i)
        if sense == "G":
            hi = b + abs(r) if r is not None else np.inf
            return b, hi
        if sense == "L":
            lo = b - abs(r) if r is not None else -np.inf
            return lo, b
        if r is None or r == 0.0:
            return b, b
        return (b, b + r) if r > 0 else (b + r, b)


def _tofloat(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        try:
            return float(tok.upper().replace("D", "E"))
        except ValueError:
            raise ParseError(f"line {lineno}: not a number: {tok!r}") from None


def parse_mps(source: str) -> GeneralLp:
    """Parse MPS text or a path to an MPS file."""
    if "\n" not in source and os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source

    g = GeneralLp()
    rows: dict = {}
    cols: dict = {}
    free_rows: set = set()
    section = None
    pending_objsense = False
    saw_endata = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip() or line.lstrip().startswith("*"):
            continue
        if line[0] not in (" ", "\t"):
            toks = line.split()
            key = toks[0].upper()
            if key not in _SECTIONS:
                raise ParseError(f"line {lineno}: unknown section {toks[0]!r}")
            section = key
            if key == "NAME":
                g.name = toks[1] if len(toks) > 1 else ""
            elif key == "OBJSENSE":
                pending_objsense = True
                if len(toks) > 1:
                    g.minimize = toks[1].upper() != "MAX"
                    pending_objsense = False
            elif key == "ENDATA":
                saw_endata = True
                break
            continue

        toks = line.split()
        if section == "OBJSENSE" and pending_objsense:
            g.minimize = toks[0].upper() != "MAX"
            pending_objsense = False
        elif section == "ROWS":
            if len(toks) != 2:
                raise ParseError(f"line {lineno}: ROWS line needs sense and name")
            sense, name = toks[0].upper(), toks[1]
            if sense == "N":
                if not g.objective_name:
                    g.objective_name = name
                else:
                    free_rows.add(name)
                continue  # later N rows are free rows, ignored
            if sense not in ("G", "L", "E"):
                raise ParseError(f"line {lineno}: unknown row sense {toks[0]!r}")
            if name in rows or name == g.objective_name:
                raise ParseError(f"line {lineno}: duplicate row {name!r}")
            rows[name] = len(g.row_names)
            g.row_names.append(name)
            g.row_senses.append(sense)
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1].upper().startswith("'MARKER'"):
                raise UnsupportedFeature(f"line {lineno}: integer markers are not supported")
            if "'MARKER'" in raw.upper():
                raise UnsupportedFeature(f"line {lineno}: integer markers are not supported")
            if len(toks) not in (3, 5):
                raise ParseError(f"line {lineno}: COLUMNS line needs 1 or 2 (row, value) pairs")
            cname = toks[0]
            if cname not in cols:
                cols[cname] = len(g.col_names)
                g.col_names.append(cname)
            j = cols[cname]
            for k in range(1, len(toks), 2):
                rname, val = toks[k], _tofloat(toks[k + 1], lineno)
                if rname == g.objective_name:
                    g.obj_entries[j] = g.obj_entries.get(j, 0.0) + val
                elif rname in rows:
                    key = (rows[rname], j)
                    g.entries[key] = g.entries.get(key, 0.0) + val
                elif rname in free_rows:
                    continue
                else:
                    raise ParseError(f"line {lineno}: unknown row {rname!r}")
        elif section in ("RHS", "RANGES"):
            # first token is the rhs/range set name unless the line already
            # pairs up without it (some writers omit the set name)
            pairs = toks[1:] if len(toks) % 2 == 1 else toks
            if len(pairs) % 2 != 0 or not pairs:
                raise ParseError(f"line {lineno}: malformed {section} line")
            for k in range(0, len(pairs), 2):
                rname, val = pairs[k], _tofloat(pairs[k + 1], lineno)
                if rname == g.objective_name:
                    if section == "RHS":
                        g.objective_rhs = val
                        continue
                    raise ParseError(f"line {lineno}: RANGES on the objective row")
                if rname not in rows:
                    if rname in free_rows:
                        continue
                    raise ParseError(f"line {lineno}: unknown row {rname!r}")
                target = g.rhs if section == "RHS" else g.ranges
                target[rows[rname]] = val
        elif section == "BOUNDS":
            btype = toks[0].upper()
            if btype in _REJECTED_BOUNDS:
                raise UnsupportedFeature(f"line {lineno}: bound type {btype} is not supported")
            if btype not in _BOUND_TYPES:
                raise ParseError(f"line {lineno}: unknown bound type {toks[0]!r}")
            needs_value = btype in ("UP", "LO", "FX")
            if len(toks) != (4 if needs_value else 3):
                raise ParseError(f"line {lineno}: malformed BOUNDS line")
            cname = toks[2]
            if cname not in cols:
                raise ParseError(f"line {lineno}: unknown column {cname!r}")
            j = cols[cname]
            if btype == "UP":
                val = _tofloat(toks[3], lineno)
                g.upper[j] = val
                if val < 0 and j not in g.lower:
                    # classic convention: a negative UP with unset LO frees the lower bound
                    g.lower[j] = -np.inf
            elif btype == "LO":
                g.lower[j] = _tofloat(toks[3], lineno)
            elif btype == "FX":
                val = _tofloat(toks[3], lineno)
                g.lower[j] = val
                g.upper[j] = val
            elif btype == "FR":
                g.lower[j] = -np.inf
                g.upper[j] = np.inf
            elif btype == "MI":
                g.lower[j] = -np.inf
            elif btype == "PL":
                g.upper[j] = np.inf
        elif section in ("NAME", "ENDATA"):
            raise ParseError(f"line {lineno}: data outside any section")
        else:
            raise ParseError(f"line {lineno}: data before any section header")

    if not saw_endata:
        raise ParseError("missing ENDATA")
    if not g.objective_name:
        raise ParseError("no objective (N) row declared")
    for j, (lo, up) in ((j, g.col_bounds(j)) for j in range(g.num_cols)):
        if lo > up:
            raise ParseError(f"column {g.col_names[j]!r} has empty bound interval")
    return g


@dataclass
class VariableMap:
    """Mapping between a GeneralLp and its canonical LinearProgram."""

    original_names: tuple
    canonical_of: list  # per canonical column: (original index, kind, shift or sign)
    objective_sign: float
    objective_constant: float

    KIND_IDENTITY = "identity"
    KIND_SHIFTED = "shifted"
    KIND_SPLIT_POS = "split_pos"
    KIND_SPLIT_NEG = "split_neg"

    def num_canonical(self) -> int:
        return len(self.canonical_of)

    def to_original(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.original_names))
        for k, (j, kind, aux) in enumerate(self.canonical_of):
            if kind == self.KIND_IDENTITY:
                out[j] += x[k]
            elif kind == self.KIND_SHIFTED:
                out[j] += x[k] + aux
            elif kind == self.KIND_SPLIT_POS:
                out[j] += x[k]
            else:
                out[j] -= x[k]
        return out

    def original_objective(self, canonical_value: float) -> float:
        return self.objective_sign * canonical_value + self.objective_constant

    def is_split(self, k: int) -> bool:
        return self.canonical_of[k][1] in (self.KIND_SPLIT_POS, self.KIND_SPLIT_NEG)

    def original_lower(self, k: int) -> float:
        j, kind, aux = self.canonical_of[k]
        if kind == self.KIND_IDENTITY:
            return 0.0
        if kind == self.KIND_SHIFTED:
            return aux
        return -np.inf


def to_canonical(g: GeneralLp) -> tuple[LinearProgram, VariableMap]:
    """Rewrite a GeneralLp into min c'x, A x >= b, 0 <= x <= u.

    Less-or-equal rows are negated, equalities and ranged rows become
    opposing inequality pairs, nonzero finite lower bounds are shifted
    away and free-below variables are split into positive parts.  The
    original objective value is canonical_value * sign + constant,
    tracked on the returned VariableMap.
    """
    ncols = g.num_cols
    sign = 1.0 if g.minimize else -1.0

    canonical_of = []
    col_shift = np.zeros(ncols)
    pos_col = np.full(ncols, -1, dtype=int)
    neg_col = np.full(ncols, -1, dtype=int)
    upper_list = []
    names = []
    bound_rows = []  # (original col, upper value) for split columns with finite upper

    for j in range(ncols):
        lo, up = g.col_bounds(j)
        if np.isinf(lo) and lo > 0 or np.isinf(up) and up < 0:
            raise ParseError(f"column {g.col_names[j]!r} has inverted infinite bounds")
        if lo == 0.0:
            pos_col[j] = len(canonical_of)
            canonical_of.append((j, VariableMap.KIND_IDENTITY, 0.0))
            names.append(g.col_names[j])
            upper_list.append(up)
        elif np.isfinite(lo):
            pos_col[j] = len(canonical_of)
            col_shift[j] = lo
            canonical_of.append((j, VariableMap.KIND_SHIFTED, lo))
            names.append(g.col_names[j])
            upper_list.append(up - lo if np.isfinite(up) else np.inf)
        else:
            pos_col[j] = len(canonical_of)
            canonical_of.append((j, VariableMap.KIND_SPLIT_POS, 1.0))
            names.append(g.col_names[j] + "+")
            upper_list.append(np.inf)
            neg_col[j] = len(canonical_of)
            canonical_of.append((j, VariableMap.KIND_SPLIT_NEG, -1.0))
            names.append(g.col_names[j] + "-")
            upper_list.append(np.inf)
            if np.isfinite(up):
                bound_rows.append((j, up))

    n = len(canonical_of)
    c = np.zeros(n)
    for j, v in g.obj_entries.items():
        c[pos_col[j]] += sign * v
        if neg_col[j] >= 0:
            c[neg_col[j]] -= sign * v

    # original row activities as column lists
    by_row: dict = {}
    for (i, j), v in g.entries.items():
        by_row.setdefault(i, []).append((j, v))

    data, indices, indptr = [], [], [0]
    b_list = []
    row_names = []

    def add_row(cols_vals, rhs, name):
        for j, v in cols_vals:
            if v == 0.0:
                continue
            indices.append(pos_col[j])
            data.append(v)
            if neg_col[j] >= 0:
                indices.append(neg_col[j])
                data.append(-v)
        indptr.append(len(data))
        b_list.append(rhs)
        row_names.append(name)

    for i in range(g.num_rows):
        cols_vals = by_row.get(i, [])
        shift = sum(v * col_shift[j] for j, v in cols_vals)
        lo, hi = g.row_interval(i)
        nm = g.row_names[i]
        if np.isfinite(lo):
            add_row(cols_vals, lo - shift, nm if not np.isfinite(hi) else nm + "_lo")
        if np.isfinite(hi):
            add_row([(j, -v) for j, v in cols_vals], -(hi - shift),
                    nm if not np.isfinite(lo) else nm + "_hi")
    for j, up in bound_rows:
        add_row([(j, -1.0)], -(up - col_shift[j]), g.col_names[j] + "_ub")

    A = sp.csr_matrix((data, indices, indptr), shape=(len(b_list), n))
    lp = LinearProgram(c, A, np.array(b_list), np.array(upper_list),
                       tuple(names), tuple(row_names))

    constant = -g.objective_rhs + sum(v * col_shift[j] for j, v in g.obj_entries.items())
    vm = VariableMap(tuple(g.col_names), canonical_of, sign, constant)
    return lp, vm


def write_mps(g: GeneralLp, path: Optional[str] = None) -> str:
    """Serialize a GeneralLp; returns the text, optionally writing it to path."""
    out = []
    out.append(f"NAME          {g.name}".rstrip())
    if not g.minimize:
        out.append("OBJSENSE")
        out.append("    MAX")
    out.append("ROWS")
    out.append(f" N  {g.objective_name}")
    for nm, sense in zip(g.row_names, g.row_senses):
        out.append(f" {sense}  {nm}")
    out.append("COLUMNS")
    for j, cname in enumerate(g.col_names):
        pairs = []
        if j in g.obj_entries:
            pairs.append((g.objective_name, g.obj_entries[j]))
        pairs.extend(
            (g.row_names[i], v) for (i, jj), v in sorted(g.entries.items()) if jj == j
        )
        for rname, v in pairs:
            out.append(f"    {cname:<10}{rname:<10}{v:.12g}")
    out.append("RHS")
    if g.objective_rhs:
        out.append(f"    RHS       {g.objective_name:<10}{g.objective_rhs:.12g}")
    for i in sorted(g.rhs):
        out.append(f"    RHS       {g.row_names[i]:<10}{g.rhs[i]:.12g}")
    if g.ranges:
        out.append("RANGES")
        for i in sorted(g.ranges):
            out.append(f"    RNG       {g.row_names[i]:<10}{g.ranges[i]:.12g}")
    bound_lines = []
    for j in range(g.num_cols):
        lo, up = g.col_bounds(j)
        cname = g.col_names[j]
        if lo == 0.0 and np.isinf(up):
            continue
        if np.isfinite(lo) and lo == up:
            bound_lines.append(f" FX BND       {cname:<10}{lo:.12g}")
            continue
        if np.isinf(lo) and np.isinf(up):
            bound_lines.append(f" FR BND       {cname}")
            continue
        if np.isinf(lo):
            bound_lines.append(f" MI BND       {cname}")
        elif lo != 0.0:
            bound_lines.append(f" LO BND       {cname:<10}{lo:.12g}")
        if np.isfinite(up):
            bound_lines.append(f" UP BND       {cname:<10}{up:.12g}")
    if bound_lines:
        out.append("BOUNDS")
        out.extend(bound_lines)
    out.append("ENDATA")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
