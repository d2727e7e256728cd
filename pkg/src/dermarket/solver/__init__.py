"""Conic-program assembly and solution kernel.

Programs are linear objectives over continuous/binary variables subject to
linear equalities, linear inequalities, second-order-cone memberships and
quadratic capacity limits.  Solves return primal values plus Lagrange
multipliers for every tagged constraint under one normalized convention:

* equality ``a'x = b``      -> dual = d(optimum)/d(b), sign free;
* inequality ``a'x <= b``   -> dual = -d(optimum)/d(b) >= 0;
* quadratic cap ``|z|^2 <= c + g'x`` -> dual = -d(optimum)/d(c) >= 0.

Pure LPs run on HiGHS; anything with a cone runs on Clarabel.
"""

from .program import ConicProgram, Solution, write_lp
from .solve import resolve_for_duals, solve_continuous, solve_mixed

__all__ = [
    "ConicProgram",
    "Solution",
    "solve_continuous",
    "solve_mixed",
    "resolve_for_duals",
    "write_lp",
]
