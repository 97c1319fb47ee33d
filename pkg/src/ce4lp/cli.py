"""Command-line surface: solve models, run explanation queries, demos, bench.

Subcommands: solve (one MPS model), ce (one explanation query), verify
(re-check a candidate), diet-demo (embedded reduced diet walkthrough) and
netlib-bench (the batch experiment driver).  Single results are emitted as
JSON with full precision; the human-readable change lists round prices to
one decimal.  Exit codes: 0 fine, 2 parse trouble, 3 numerical failure,
4 a result claimed proven that its own verifier rejects.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bilinear import BnbBudget
from .errors import Ce4lpError, NoMutableParameters, NumericalFailure, ParseError
from .lp import LinearProgram, LpStatus, check_certificate, solve
from .model import (
    CeKind,
    CeQuery,
    CeResult,
    CeStatus,
    Params,
    diet_query,
    generate_netlib_query,
    query_from_json,
)
from .mps import parse_mps, to_canonical
from .rcep import (
    MAX_AGGREGATION,
    SCALED_BY_XHAT,
    SINGLE_COLUMN,
    X_WEIGHTED,
    solve_rcep_bilinear,
    solve_rcep_bisect,
    solve_rcep_direct,
)
from .verify import verify_relative, verify_strong, verify_weak
from .wcep_scep import solve_scep, solve_wcep

ZERO_NORM_TOL = 1e-9
SMALL_N, MEDIUM_N = 534, 2167
SMALL_M, MEDIUM_M = 351, 906


# ------------------------------------------------------------------- loading


def _load_model(ref: str):
    """A canonical LP plus its bound-conversion map (None for the demo model)."""
    if ref == "diet-reduced":
        return diet_query("prices").lp, None
    path = Path(ref)
    if not path.exists():
        raise ParseError(f"model file not found: {ref}")
    return to_canonical(parse_mps(path.read_text()))


def _load_query(args) -> CeQuery:
    try:
        doc = json.loads(Path(args.query).read_text())
    except FileNotFoundError:
        raise ParseError(f"query file not found: {args.query}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"query file {args.query}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("query file must hold a JSON object")
    model_ref = args.model or doc.get("model")
    if not model_ref:
        raise ParseError("no model given: pass --model or a 'model' query field")
    lp, _ = _load_model(str(model_ref))
    sol = solve(lp)
    if sol.status != LpStatus.OPTIMAL:
        raise NumericalFailure(f"present problem came back {sol.status.name}")
    q = query_from_json(doc, lp, sol.x)
    updates = {}
    if args.alpha is not None:
        updates["alpha"] = args.alpha
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(q, **updates) if updates else q


def _candidate_from_json(doc: dict, lp: LinearProgram) -> Params:
    unknown = set(doc) - {"c", "entries", "rhs"}
    if unknown:
        raise ParseError(f"unknown candidate fields: {sorted(unknown)}")
    c = lp.c.copy()
    A = lp.A.tolil(copy=True)
    b = lp.b.copy()
    for ref, val in dict(doc.get("c", {})).items():
        c[lp.var_index(ref)] = float(val)
    for i, j, val in doc.get("entries", ()):
        A[int(i), int(j)] = float(val)
    for i, val in doc.get("rhs", ()):
        b[int(i)] = float(val)
    return Params(c, A.tocsr(), b)


# ------------------------------------------------------------------ reporting


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (CeStatus, CeKind)):
        return v.value
    if isinstance(v, LpStatus):
        return v.name
    return v


def _nonzero_triplets(dA):
    coo = dA.tocoo()
    keep = np.abs(coo.data) > ZERO_NORM_TOL
    return coo.row[keep], coo.col[keep], coo.data[keep]


def _change_rows(lp: LinearProgram, params: Params):
    names = lp.names or [f"x{j}" for j in range(lp.num_vars)]
    rows = lp.row_names or [f"row{i}" for i in range(lp.num_rows)]
    out = []
    dc = params.c - lp.c
    for j in np.nonzero(np.abs(dc) > ZERO_NORM_TOL)[0]:
        out.append((str(names[j]), float(lp.c[j]), float(params.c[j])))
    for i, j, dv in zip(*_nonzero_triplets(params.A - lp.A)):
        old = float(lp.A[int(i), int(j)])
        out.append((f"{rows[i]} in {names[j]}", old, old + float(dv)))
    db = params.b - lp.b
    for i in np.nonzero(np.abs(db) > ZERO_NORM_TOL)[0]:
        out.append((f"rhs {rows[i]}", float(lp.b[i]), float(params.b[i])))
    return out


def _result_report(q: CeQuery, res: CeResult) -> dict:
    report = {
        "status": res.status.value,
        "kind": res.kind.value,
        "distance": res.distance,
        "objective": res.objective,
        "lower_bound": res.lower_bound,
        "stats": _jsonable(res.stats),
    }
    if res.verification is not None:
        report["verification"] = {
            "passed": bool(res.verification.passed),
            "reason": res.verification.reason,
        }
    if res.candidate is not None:
        report["changes"] = [
            {"what": w, "from": old, "to": new}
            for w, old, new in _change_rows(q.lp, res.candidate)
        ]
        report["candidate"] = {
            "c": res.candidate.c.tolist(),
            "b": res.candidate.b.tolist(),
            "entries_changed": [
                [int(i), int(j), float(q.lp.A[int(i), int(j)] + v)]
                for i, j, v in zip(*_nonzero_triplets(res.candidate.A - q.lp.A))
            ],
        }
    if res.witness is not None:
        report["witness"] = res.witness.tolist()
    return report


def _print_human(q: CeQuery, res: CeResult):
    print(f"{res.kind.value} explanation: {res.status.value}")
    if res.distance is not None:
        print(f"  distance {res.distance:.6g}")
    if res.lower_bound is not None:
        print(f"  lower bound {res.lower_bound:.6g}")
    if res.candidate is not None:
        for what, old, new in _change_rows(q.lp, res.candidate):
            print(f"  {what}: {old:.1f} -> {new:.1f}")
        plain = solve(res.candidate.as_lp(q.lp))
        aug = solve(q.augmented_lp(res.candidate))
        if plain.status == LpStatus.OPTIMAL:
            print(f"  plain optimum: {plain.objective:.6g}")
            if res.kind is CeKind.WEAK and not q.favored.contains(plain.x, tol=1e-7):
                print("  note: this plain optimum sits outside the favored region;"
                      " some other optimal solution attains it")
        if aug.status == LpStatus.OPTIMAL:
            print(f"  optimum within favored region: {aug.objective:.6g}")
    if res.verification is not None:
        flag = "passed" if res.verification.passed else "FAILED"
        tail = f" ({res.verification.reason})" if res.verification.reason else ""
        print(f"  verification {flag}{tail}")


def _write_out(report: dict, out):
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# ----------------------------------------------------------------- dispatch


def _budget(args) -> BnbBudget:
    return BnbBudget(max_nodes=args.budget_nodes, max_seconds=args.budget_seconds)


def _solve_kind(q: CeQuery, kind: str, budget: BnbBudget) -> CeResult:
    if kind == "weak":
        return solve_wcep(q, budget=budget)
    if kind == "strong":
        return solve_scep(q, budget=budget)
    agg = q.dist.aggregation
    if agg == "x_weighted":
        return solve_rcep_direct(q, X_WEIGHTED)
    if agg == "scaled_by_xhat":
        return solve_rcep_direct(q, SCALED_BY_XHAT)
    if agg == "max":
        return solve_rcep_bisect(q, MAX_AGGREGATION)
    if len(q.mutable.mutable_columns()) == 1 and not q.mutable.rhs and not q.mutable.ties:
        return solve_rcep_bisect(q, SINGLE_COLUMN)
    return solve_rcep_bilinear(q, budget=budget)


_VERIFIERS = {"relative": verify_relative, "weak": verify_weak, "strong": verify_strong}


def _finalize(q: CeQuery, res: CeResult, args) -> int:
    _print_human(q, res)
    if args.out:
        _write_out(_result_report(q, res), args.out)
    if res.status == CeStatus.PROVEN and res.candidate is not None:
        if not _VERIFIERS[res.kind.value](q, res.candidate).passed:
            print("error: proven result failed its own verification", file=sys.stderr)
            return 4
    return 0


# -------------------------------------------------------------- subcommands


def cmd_solve(args) -> int:
    lp, _ = _load_model(args.model)
    sol = solve(lp)
    report = {
        "status": sol.status.name,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "residuals": _jsonable(sol.residuals),
    }
    if sol.status == LpStatus.OPTIMAL:
        cert = check_certificate(lp, sol)
        report["certificate"] = {
            "passed": bool(cert.passed),
            "primal_violation": cert.primal_violation,
            "dual_violation": cert.dual_violation,
            "relative_gap": cert.relative_gap,
        }
        print(f"OPTIMAL objective {sol.objective:.10g}")
        print(f"  certificate: primal {cert.primal_violation:.2e}, "
              f"dual {cert.dual_violation:.2e}, gap {cert.relative_gap:.2e}")
    else:
        print(sol.status.name)
    if args.out:
        _write_out(report, args.out)
    return 0 if sol.status == LpStatus.OPTIMAL else 1


def cmd_ce(args) -> int:
    q = _load_query(args)
    res = _solve_kind(q, args.kind, _budget(args))
    return _finalize(q, res, args)


def cmd_verify(args) -> int:
    q = _load_query(args)
    try:
        doc = json.loads(Path(args.candidate).read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise ParseError(f"candidate file {args.candidate}: {exc}") from None
    params = _candidate_from_json(doc, q.lp)
    rep = _VERIFIERS[args.kind](q, params)
    tail = f": {rep.reason}" if rep.reason else ""
    print(("passed" if rep.passed else "failed") + tail)
    if args.out:
        _write_out(
            {"passed": bool(rep.passed), "reason": rep.reason,
             "details": _jsonable(rep.details)},
            args.out,
        )
    return 0 if rep.passed else 1


def cmd_diet_demo(args) -> int:
    q = diet_query(args.mode)
    budget = _budget(args)
    reports = {}
    code = 0
    for kind in ("relative", "weak", "strong"):
        print(f"--- {kind} ---")
        res = _solve_kind(q, kind, budget)
        _print_human(q, res)
        reports[kind] = _result_report(q, res)
        if res.status == CeStatus.PROVEN and res.candidate is not None:
            if not _VERIFIERS[kind](q, res.candidate).passed:
                code = 4
    if args.out:
        _write_out({"mode": args.mode, "results": reports}, args.out)
    return code


# ------------------------------------------------------------------- bench


@dataclass
class BenchConfig:
    instances_dir: str
    out_dir: str
    seeds: int = 20
    columns: tuple = (1, 5, 10)
    alpha: float = 1.0
    methods: tuple = ("rcep-direct", "rcep-bilinear")
    budget_nodes: int = 150
    budget_seconds: float = 10.0
    large: bool = False

    def __post_init__(self):
        if self.seeds <= 0 or self.budget_nodes <= 0 or self.budget_seconds <= 0:
            raise ParseError("bench budgets and seed count must be positive")
        self.columns = tuple(sorted(set(int(k) for k in self.columns)))
        known = {"rcep-direct", "rcep-bilinear", "wcep", "scep"}
        bad = set(self.methods) - known
        if bad:
            raise ParseError(f"unknown bench methods: {sorted(bad)}")


def size_category(n: int, m: int) -> tuple:
    ncls = "small" if n <= SMALL_N else ("medium" if n <= MEDIUM_N else "large")
    mcls = "small" if m <= SMALL_M else ("medium" if m <= MEDIUM_M else "large")
    return ncls, mcls


def _zero_norms(q: CeQuery, params: Params) -> tuple:
    c0 = int(np.sum(np.abs(params.c - q.lp.c) > ZERO_NORM_TOL))
    dA = (params.A - q.lp.A).tocoo()
    a0 = int(np.sum(np.abs(dA.data) > ZERO_NORM_TOL))
    return c0, a0


def _bench_one_method(q: CeQuery, method: str, cfg: BenchConfig) -> dict:
    budget = BnbBudget(max_nodes=cfg.budget_nodes, max_seconds=cfg.budget_seconds)
    t0 = time.monotonic()
    try:
        if method == "rcep-direct":
            res = solve_rcep_direct(q, X_WEIGHTED)
        elif method == "rcep-bilinear":
            res = solve_rcep_bilinear(q, budget=budget)
        elif method == "wcep":
            res = solve_wcep(q, budget=budget)
        else:
            res = solve_scep(q, budget=budget)
    except Ce4lpError as exc:
        return {"status": "error", "error": str(exc),
                "seconds": round(time.monotonic() - t0, 4)}
    row = {
        "status": res.status.value,
        "seconds": round(time.monotonic() - t0, 4),
        "distance": res.distance,
        "objective": res.objective,
        "verified": bool(res.verification.passed)
        if res.verification is not None else None,
    }
    if res.candidate is not None:
        c0, a0 = _zero_norms(q, res.candidate)
        row["c_zero_norm"] = c0
        row["a_zero_norm"] = a0
    return row


def _bench_job(payload):
    """One (instance, seed): the nested k ladder, every method on each rung."""
    text, name, seed, cfg = payload
    lp, vmap = to_canonical(parse_mps(text))
    sol = solve(lp)
    if sol.status != LpStatus.OPTIMAL:
        return [{"instance": name, "seed": seed, "skip": sol.status.name}]
    out = []
    prior = None
    for k in cfg.columns:
        try:
            q = generate_netlib_query(lp, sol.x, seed=seed, k=k, prior=prior, vmap=vmap)
        except NoMutableParameters as exc:
            out.append({"instance": name, "seed": seed, "skip": f"k={k}: {exc}"})
            continue
        if cfg.alpha != 1.0:
            q = dataclasses.replace(q, alpha=cfg.alpha)
        prior = q.mutable.mutable_columns()
        base = {
            "instance": name,
            "n": lp.num_vars,
            "m": lp.num_rows,
            "seed": seed,
            "k": k,
            "mutable_positions": len(q.mutable.cost) + len(q.mutable.entries),
            "mutable_columns": " ".join(map(str, prior)),
            "favored": " ".join(f"{j}{s}{r:g}" for j, s, r in q.favored.constraints),
        }
        for method in cfg.methods:
            row = dict(base)
            row["method"] = method
            row.update(_bench_one_method(q, method, cfg))
            out.append(row)
    return out


def _pool_size(n_jobs: int) -> int:
    cap = os.environ.get("CE4LP_THREADS")
    size = min(n_jobs, os.cpu_count() or 1)
    if cap:
        size = min(size, max(1, int(cap)))
    return max(1, size)


def run_netlib_bench(cfg: BenchConfig) -> dict:
    root = Path(cfg.instances_dir)
    files = sorted(
        p for p in root.iterdir() if p.suffix.lower() == ".mps"
    ) if root.is_dir() else []
    if not files:
        raise ParseError(f"no MPS files under {cfg.instances_dir}")
    jobs = []
    skipped = []
    for f in files:
        text = f.read_text()
        try:
            lp, _ = to_canonical(parse_mps(text))
        except Ce4lpError as exc:
            skipped.append({"instance": f.name, "reason": str(exc)})
            continue
        if lp.num_vars > MEDIUM_N and not cfg.large:
            skipped.append({"instance": f.name,
                            "reason": f"n={lp.num_vars} above desk scale; pass --large"})
            continue
        for seed in range(cfg.seeds):
            jobs.append((text, f.name, seed, cfg))

    rows = []
    workers = _pool_size(len(jobs))
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            for chunk in pool.imap_unordered(_bench_job, jobs):
                rows.extend(chunk)
    else:
        for payload in jobs:
            rows.extend(_bench_job(payload))
    for r in rows:
        if "skip" in r:
            skipped.append({"instance": r["instance"],
                            "reason": f"seed {r['seed']}: {r['skip']}"})
    rows = [r for r in rows if "skip" not in r]
    rows.sort(key=lambda r: (r["instance"], r["seed"], r["k"], r["method"]))

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "queries.csv", rows)
    _write_rows(out / "skipped.csv", skipped or [{"instance": "", "reason": ""}])
    _write_rows(out / "table_feasibility.csv", _feasibility_table(rows))
    _write_rows(out / "table_sparsity.csv", _sparsity_table(rows, cfg.methods))
    nesting = _nesting_report(rows, cfg.columns)
    summary = {
        "queries": len(rows),
        "skipped": len(skipped),
        "nesting_ladders": nesting["ladders"],
        "nesting_violations": nesting["violations"],
        "out_dir": str(out),
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    return summary


def _write_rows(path: Path, rows):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def _is_feasible(row) -> bool:
    return row.get("status") in ("proven", "incumbent") and row.get("verified") is True


def _feasibility_table(rows):
    groups = {}
    for r in rows:
        key = (size_category(r["n"], r["m"])[0], r["k"], r["method"])
        groups.setdefault(key, []).append(r)
    table = []
    for (ncls, k, method), rs in sorted(groups.items()):
        table.append({
            "n_class": ncls,
            "k": k,
            "method": method,
            "queries": len(rs),
            "feasible_pct": round(100.0 * sum(_is_feasible(r) for r in rs) / len(rs), 1),
            "mean_mutable_positions": round(
                float(np.mean([r["mutable_positions"] for r in rs])), 2),
            "mean_seconds": round(float(np.mean([r["seconds"] for r in rs])), 4),
        })
    return table


def _sparsity_table(rows, methods):
    # compare only on queries every method answered with a verified candidate
    by_query = {}
    for r in rows:
        by_query.setdefault((r["instance"], r["seed"], r["k"]), {})[r["method"]] = r
    shared = [
        q for q in by_query.values()
        if set(q) == set(methods) and all(_is_feasible(r) for r in q.values())
    ]
    table = []
    for method in methods:
        rs = [q[method] for q in shared]
        row = {"method": method, "shared_feasible": len(rs)}
        if rs:
            row["mean_c_zero_norm"] = round(float(np.mean([r["c_zero_norm"] for r in rs])), 3)
            row["mean_a_zero_norm"] = round(float(np.mean([r["a_zero_norm"] for r in rs])), 3)
            row["mean_distance"] = round(float(np.mean([r["distance"] for r in rs])), 4)
        table.append(row)
    return table


def _nesting_report(rows, columns):
    """Optimal distances must not grow as the mutable column set widens.

    Judged per method on its own optimized functional, and only on rungs
    solved to proven optimality; an incumbent cut off by the budget says
    nothing about the optimum.
    """
    best = {}
    for r in rows:
        if r["status"] == "proven" and r.get("verified") and r.get("objective") is not None:
            best[(r["method"], r["instance"], r["seed"], r["k"])] = r["objective"]
    ladders = violations = 0
    for method, inst, seed in {(me, i, s) for me, i, s, _ in best}:
        ds = [best.get((method, inst, seed, k)) for k in columns]
        if any(d is None for d in ds):
            continue
        ladders += 1
        if any(ds[i + 1] > ds[i] + 1e-7 * (1 + abs(ds[i])) for i in range(len(ds) - 1)):
            violations += 1
    return {"ladders": ladders, "violations": violations}


def cmd_netlib_bench(args) -> int:
    cfg = BenchConfig(
        instances_dir=args.instances,
        out_dir=args.out or "bench-out",
        seeds=args.seeds,
        columns=tuple(args.columns.split(",")),
        alpha=args.alpha if args.alpha is not None else 1.0,
        methods=tuple(args.methods.split(",")),
        budget_nodes=args.budget_nodes,
        budget_seconds=args.budget_seconds,
        large=args.large,
    )
    summary = run_netlib_bench(cfg)
    print(json.dumps(_jsonable(summary), indent=2))
    return 0


# --------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ce4lp",
        description="counterfactual explanations for linear optimization",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def budgets(p, nodes, seconds):
        p.add_argument("--budget-nodes", type=int, default=nodes)
        p.add_argument("--budget-seconds", type=float, default=seconds)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--out", help="write the full-precision JSON report here")

    p = sub.add_parser("solve", help="solve one MPS model and certify the result")
    p.add_argument("--model", required=True, help="MPS path or 'diet-reduced'")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("ce", help="run one explanation query")
    p.add_argument("--model", help="MPS path or 'diet-reduced'; the query file may also name it")
    p.add_argument("--query", required=True, help="query JSON path")
    p.add_argument("--kind", choices=("relative", "weak", "strong"), required=True)
    p.add_argument("--seed", type=int, default=None)
    budgets(p, nodes=20_000, seconds=120.0)
    p.set_defaults(fn=cmd_ce)

    p = sub.add_parser("verify", help="re-check a candidate parameter change")
    p.add_argument("--model")
    p.add_argument("--query", required=True)
    p.add_argument("--kind", choices=("relative", "weak", "strong"), required=True)
    p.add_argument("--candidate", required=True, help="candidate JSON path")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("diet-demo", help="reduced diet walkthrough, all three kinds")
    p.add_argument("--mode", choices=("prices", "prices+nutrients"), default="prices")
    budgets(p, nodes=600, seconds=180.0)
    p.set_defaults(fn=cmd_diet_demo)

    p = sub.add_parser("netlib-bench", help="batch relative-CE experiment over MPS files")
    p.add_argument("--instances", required=True, help="directory of MPS files")
    p.add_argument("--out", help="output directory (default bench-out)")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--columns", default="1,5,10", help="comma list of mutable column counts")
    p.add_argument("--methods", default="rcep-direct,rcep-bilinear",
                   help="comma list from rcep-direct,rcep-bilinear,wcep,scep")
    p.add_argument("--budget-nodes", type=int, default=150)
    p.add_argument("--budget-seconds", type=float, default=10.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--large", action="store_true",
                   help="also run instances beyond desk scale (n > 2167)")
    p.set_defaults(fn=cmd_netlib_bench)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
