"""Deterministic synthetic MPS instances for command-line and bench tests.

Covering problems: minimize a positive cost over >= rows with nonnegative
coefficients and boxed variables, so every instance is feasible (push all
variables to their caps) and bounded.  Costs and entries carry two decimals
on purpose: the bench's mutability rule picks fractional data.
"""

import numpy as np


def instance_text(name: str, seed: int, n: int = 6, m: int = 3) -> str:
    rng = np.random.default_rng(seed)
    cost = np.round(rng.uniform(2.0, 30.0, size=n), 1) + 0.13
    entries = {}
    for i in range(m):
        cols = rng.permutation(n)[: max(2, int(0.75 * n))]
        for j in cols:
            entries[(i, int(j))] = round(float(rng.uniform(0.5, 9.5)), 1) + 0.07
    for j in range(n):
        if not any(jj == j for (_, jj) in entries):
            entries[(rng.integers(m), j)] = round(float(rng.uniform(0.5, 9.5)), 1) + 0.07
    rhs = np.round(rng.uniform(8.0, 28.0, size=m), 1)

    lines = [f"NAME          {name}", "ROWS", " N  COST"]
    lines += [f" G  R{i + 1}" for i in range(m)]
    lines.append("COLUMNS")
    for j in range(n):
        lines.append(f"    C{j + 1}        COST      {cost[j]}")
        for (i, jj), v in sorted(entries.items()):
            if jj == j:
                lines.append(f"    C{j + 1}        R{i + 1}        {v}")
    lines.append("RHS")
    for i in range(m):
        lines.append(f"    RHS       R{i + 1}        {rhs[i]}")
    lines.append("BOUNDS")
    for j in range(n):
        lines.append(f" UP BND       C{j + 1}        50.0")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def write_instances(directory, count: int = 2, n: int = 6, m: int = 3, base_seed: int = 7):
    """Materialize `count` instances under `directory`; returns their paths."""
    paths = []
    for i in range(count):
        p = directory / f"syn{i + 1}.mps"
        p.write_text(instance_text(f"SYN{i + 1}", seed=base_seed + i, n=n, m=m))
        paths.append(p)
    return paths
