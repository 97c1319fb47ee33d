"""Counterfactual explanations for linear programs.

Given a solved LP and a favored region for its decision variables, the
package searches for minimal parameter changes (costs, constraint
coefficients, right-hand sides) that make the favored region attainable:
relatively (some good-enough feasible point), weakly (some optimal
solution) or strongly (every optimal solution).  Candidate explanations
are always re-checked by independent LP-based verification.
"""

from .errors import (
    AssumptionViolated,
    Ce4lpError,
    DimensionMismatch,
    MissingPoint,
    NoMutableParameters,
    NumericalFailure,
    ParseError,
    UnboundedOperand,
    UnsupportedFeature,
)
from .lp import (
    CertificateReport,
    LinearProgram,
    LpSolution,
    LpStatus,
    Polyhedron,
    check_certificate,
    solve,
    with_constraints,
)

__all__ = [
    "AssumptionViolated",
    "Ce4lpError",
    "CertificateReport",
    "DimensionMismatch",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "MissingPoint",
    "NoMutableParameters",
    "NumericalFailure",
    "ParseError",
    "Polyhedron",
    "UnboundedOperand",
    "UnsupportedFeature",
    "check_certificate",
    "solve",
    "with_constraints",
]

__version__ = "0.1.0"
