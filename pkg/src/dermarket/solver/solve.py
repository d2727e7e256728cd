"""Backends (HiGHS for LPs, Clarabel for cone programs) and branch-and-bound."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import replace

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from ..errors import BranchLimit, ConfigError, Infeasible, NumericalFailure
from .program import INF, ConicProgram, Solution

FEAS_TOL = 1e-7
MIP_GAP = 1e-6
COMP_TOL = 1e-7
INT_TOL = 1e-6
NODE_CAP = 100_000

Overrides = dict[int, tuple[float, float]]


def _bounds_with(prog: ConicProgram, overrides: Overrides | None) -> list[tuple[float, float]]:
    bounds = list(zip(prog.lb, prog.ub))
    for idx, (lo, hi) in (overrides or {}).items():
        bounds[idx] = (lo, hi)
    return bounds


# ---------------------------------------------------------------------------
# HiGHS (pure LP) path
# ---------------------------------------------------------------------------

def _solve_highs(prog: ConicProgram, overrides: Overrides | None) -> Solution:
    n = prog.n_vars

    def matrix(cons):
        rows, cols, vals, rhs = [], [], [], []
        for k, con in enumerate(cons):
            for idx, coef in con.terms:
                rows.append(k)
                cols.append(idx)
                vals.append(coef)
            rhs.append(con.rhs)
        mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(cons), n))
        return mat, np.asarray(rhs, dtype=float)

    a_eq, b_eq = matrix(prog.eqs) if prog.eqs else (None, None)
    a_ub, b_ub = matrix(prog.les) if prog.les else (None, None)
    res = linprog(
        np.asarray(prog.cost, dtype=float),
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=_bounds_with(prog, overrides),
        method="highs",
        options={
            "primal_feasibility_tolerance": 1e-9,
            "dual_feasibility_tolerance": 1e-9,
        },
    )
    if res.status == 2:
        raise Infeasible("LP reported infeasible")
    if res.status == 3:
        raise NumericalFailure("LP reported unbounded")
    if res.status != 0:
        raise NumericalFailure(f"LP solver failed: {res.message}")
    duals: dict = {}
    if prog.eqs:
        for con, marg in zip(prog.eqs, res.eqlin.marginals):
            if con.tag is not None:
                duals[con.tag] = float(marg)
    if prog.les:
        for con, marg in zip(prog.les, res.ineqlin.marginals):
            if con.tag is not None:
                duals[con.tag] = float(-marg)
    return Solution("optimal", float(res.fun), np.asarray(res.x, dtype=float), duals)


# ---------------------------------------------------------------------------
# Clarabel (cone) path
# ---------------------------------------------------------------------------

class _ConeCache:
    """Row layout of the Clarabel problem; built once, b patched per solve.

    Clarabel solves min c'x s.t. Ax + s = b, s in K, returning duals z with
    d(optimum)/d(b_j) = -z_j.  Rows: equalities (zero cone), inequalities
    then variable bounds (nonnegative cone), then one SOC block per
    quadratic-cap / SOC constraint.
    """

    def __init__(self, prog: ConicProgram):
        import clarabel

        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        b: list[float] = []
        r = 0

        def put(terms, rhs_val):
            nonlocal r
            for idx, coef in terms:
                rows.append(r)
                cols.append(idx)
                vals.append(coef)
            b.append(rhs_val)
            r += 1

        for con in prog.eqs:
            put(con.terms, con.rhs)
        n_eq = r

        for con in prog.les:
            put(con.terms, con.rhs)
        # bound rows: binaries always materialized so branch fixing only
        # patches b; other variables only where finite
        self.bound_rows: dict[int, tuple[int | None, int | None]] = {}
        for i in range(prog.n_vars):
            up_row = low_row = None
            if prog.ub[i] < INF or prog.binary[i]:
                up_row = r
                put([(i, 1.0)], min(prog.ub[i], 1.0) if prog.binary[i] else prog.ub[i])
            if prog.lb[i] > -INF or prog.binary[i]:
                low_row = r
                put([(i, -1.0)], -(max(prog.lb[i], 0.0) if prog.binary[i] else prog.lb[i]))
            self.bound_rows[i] = (up_row, low_row)
        n_nonneg = r - n_eq

        cones = []
        if n_eq:
            cones.append(clarabel.ZeroConeT(n_eq))
        if n_nonneg:
            cones.append(clarabel.NonnegativeConeT(n_nonneg))

        self.soc_spans: list[tuple[str, object, int, int]] = []  # kind, con, start, dim
        for con in prog.socs:
            start = r
            head_terms, head_const = con.head
            put([(i, -c) for i, c in head_terms], head_const)
            for terms, const in con.rows:
                put([(i, -c) for i, c in terms], const)
            dim = 1 + len(con.rows)
            cones.append(clarabel.SecondOrderConeT(dim))
            self.soc_spans.append(("soc", con, start, dim))
        for con in prog.quad_caps:
            start = r
            # head (w+1)/2 and tail (w-1)/2 with w = cap_const + cap_terms'x
            put([(i, -c / 2.0) for i, c in con.cap_terms], (con.cap_const + 1.0) / 2.0)
            for terms, const in con.rows:
                put([(i, -c) for i, c in terms], const)
            put([(i, -c / 2.0) for i, c in con.cap_terms], (con.cap_const - 1.0) / 2.0)
            dim = 2 + len(con.rows)
            cones.append(clarabel.SecondOrderConeT(dim))
            self.soc_spans.append(("quad", con, start, dim))

        self.matrix = sparse.csc_matrix((vals, (rows, cols)), shape=(r, prog.n_vars))
        self.b = np.asarray(b, dtype=float)
        self.cones = cones
        self.n_eq = n_eq


def _cone_cache(prog: ConicProgram) -> _ConeCache:
    cache = getattr(prog, "_cone_cache", None)
    if cache is None:
        cache = _ConeCache(prog)
        prog._cone_cache = cache  # type: ignore[attr-defined]
    return cache


# settings overlays tried in order until one yields an audited solution;
# the default static regularization (1e-8) biases lightly loaded instances,
# while some larger instances need it for factorization stability
_CONE_PROFILES: tuple[dict, ...] = (
    {"static_regularization_constant": 1e-10},
    {},
    {"equilibrate_enable": False},
)


def _solve_clarabel(
    prog: ConicProgram, overrides: Overrides | None, profile: dict
) -> Solution:
    import clarabel

    cache = _cone_cache(prog)
    b = cache.b.copy()
    for idx, (lo, hi) in (overrides or {}).items():
        up_row, low_row = cache.bound_rows[idx]
        if up_row is None or low_row is None:
            raise ConfigError(f"variable {prog.names[idx]} has no patchable bound rows")
        b[up_row] = hi
        b[low_row] = -lo

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = 1e-9
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    # keep raw KKT residuals well below the 1e-7 audit threshold
    settings.iterative_refinement_abstol = 1e-14
    settings.iterative_refinement_reltol = 1e-14
    for key, val in profile.items():
        setattr(settings, key, val)
    solver = clarabel.DefaultSolver(
        sparse.csc_matrix((prog.n_vars, prog.n_vars)),
        np.asarray(prog.cost, dtype=float),
        cache.matrix,
        b,
        cache.cones,
        settings,
    )
    res = solver.solve()
    status = str(res.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        raise Infeasible(
            "cone program reported infeasible", tag=_certificate_tag(prog, cache, res.z)
        )
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        raise NumericalFailure("cone program reported unbounded")
    if status not in ("Solved", "AlmostSolved"):
        raise NumericalFailure(f"cone solver failed: {status}")

    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    duals: dict = {}
    for k, con in enumerate(prog.eqs):
        if con.tag is not None:
            duals[con.tag] = float(-z[k])
    for k, con in enumerate(prog.les):
        if con.tag is not None:
            duals[con.tag] = float(z[cache.n_eq + k])
    cone_duals: dict = {}
    cone_slacks: dict = {}
    for kind, con, start, dim in cache.soc_spans:
        zblk = z[start : start + dim]
        sblk = b[start : start + dim] - cache.matrix[start : start + dim, :] @ x
        if kind == "quad":
            if con.tag is not None:
                duals[con.tag] = float((zblk[0] + zblk[-1]) / 2.0)
                # cap slack: cap - sum rows^2, with head=(w+1)/2, tail=(w-1)/2
                w = sblk[0] + sblk[-1]
                cone_slacks[con.tag] = float(w - np.sum(sblk[1:-1] ** 2))
        else:
            if con.tag is not None:
                cone_duals[con.tag] = zblk.copy()
                cone_slacks[con.tag] = float(sblk[0] - np.linalg.norm(sblk[1:]))
    return Solution(
        "optimal", float(np.dot(prog.cost, x)), x, duals, cone_duals, cone_slacks
    )


def _certificate_tag(prog: ConicProgram, cache: _ConeCache, z) -> object | None:
    """Name the tagged constraint carrying the most certificate weight."""
    z = np.asarray(z, dtype=float)
    best_tag, best = None, 0.0
    for k, con in enumerate(prog.eqs):
        if con.tag is not None and abs(z[k]) > best:
            best_tag, best = con.tag, abs(z[k])
    for k, con in enumerate(prog.les):
        if con.tag is not None and abs(z[cache.n_eq + k]) > best:
            best_tag, best = con.tag, abs(z[cache.n_eq + k])
    return best_tag


# ---------------------------------------------------------------------------
# feasibility audit
# ---------------------------------------------------------------------------

def _max_violation(prog: ConicProgram, x: np.ndarray, overrides: Overrides | None):
    worst, worst_tag = 0.0, None

    def consider(v, tag):
        nonlocal worst, worst_tag
        if v > worst:
            worst, worst_tag = v, tag

    for con in prog.eqs:
        lhs = sum(c * x[i] for i, c in con.terms)
        consider(abs(lhs - con.rhs), con.tag)
    for con in prog.les:
        lhs = sum(c * x[i] for i, c in con.terms)
        consider(lhs - con.rhs, con.tag)
    for i, (lo, hi) in enumerate(_bounds_with(prog, overrides)):
        consider(lo - x[i], None)
        consider(x[i] - hi, None)
    for con in prog.socs:
        head = sum(c * x[i] for i, c in con.head[0]) + con.head[1]
        norm = math.hypot(*(sum(c * x[i] for i, c in t) + k for t, k in con.rows))
        consider(norm - head, con.tag)
    for con in prog.quad_caps:
        cap = con.cap_const + sum(c * x[i] for i, c in con.cap_terms)
        q = sum((sum(c * x[i] for i, c in t) + k) ** 2 for t, k in con.rows)
        consider(q - cap, con.tag)
    return worst, worst_tag


def _solve(prog: ConicProgram, overrides: Overrides | None, feas_tol: float) -> Solution:
    if not prog.has_cones:
        sol = _solve_highs(prog, overrides)
        worst, worst_tag = _max_violation(prog, sol.x, overrides)
        if worst > feas_tol:
            raise NumericalFailure(
                f"solution violates constraints by {worst:.3e} > {feas_tol:.1e}",
                tag=worst_tag,
            )
        return sol
    failure: Exception | None = None
    for profile in _CONE_PROFILES:
        try:
            sol = _solve_clarabel(prog, overrides, profile)
        except NumericalFailure as exc:
            failure = exc
            continue
        worst, worst_tag = _max_violation(prog, sol.x, overrides)
        if worst <= feas_tol:
            return sol
        failure = NumericalFailure(
            f"solution violates constraints by {worst:.3e} > {feas_tol:.1e}",
            tag=worst_tag,
        )
    raise failure


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def solve_continuous(
    prog: ConicProgram,
    overrides: Overrides | None = None,
    feas_tol: float = FEAS_TOL,
) -> Solution:
    """Solve with binaries absent or pinned; duals returned for tagged rows."""
    free = prog.free_binaries(overrides)
    if free:
        raise ConfigError(
            f"free binary variables present ({prog.names[free[0]]}, ...); "
            "use solve_mixed or fix them"
        )
    return _solve(prog, overrides, feas_tol)


def resolve_for_duals(
    prog: ConicProgram,
    binaries: dict[int, float],
    feas_tol: float = FEAS_TOL,
) -> Solution:
    """Continuous re-solve with every binary pinned to ``binaries``."""
    missing = [i for i in prog.binary_indices() if i not in binaries]
    if missing:
        raise ConfigError(f"assignment misses binaries ({prog.names[missing[0]]}, ...)")
    overrides = {i: (float(v), float(v)) for i, v in binaries.items()}
    return _solve(prog, overrides, feas_tol)


def _repair(
    prog: ConicProgram,
    sol: Solution,
    free: list[int],
    comp_tol: float,
    int_tol: float,
) -> Solution | None:
    """Round the relaxed binaries when complementarity already holds."""
    gate_by_psi = {psi: (c, d) for psi, c, d in prog.gates}
    x = sol.x.copy()
    for bvar in free:
        if bvar in gate_by_psi:
            c, d = gate_by_psi[bvar]
            if min(x[c], x[d]) > comp_tol:
                return None
            x[bvar] = 1.0 if x[c] > comp_tol else (0.0 if x[d] > comp_tol else round(x[bvar]))
        else:
            if abs(x[bvar] - round(x[bvar])) > int_tol:
                return None
            x[bvar] = round(x[bvar])
    return replace(sol, x=x)


def solve_mixed(
    prog: ConicProgram,
    overrides: Overrides | None = None,
    mip_gap: float = MIP_GAP,
    comp_tol: float = COMP_TOL,
    node_cap: int = NODE_CAP,
    feas_tol: float = FEAS_TOL,
) -> Solution:
    """Relax-and-repair, falling back to best-first branch-and-bound.

    The continuous relaxation is accepted whenever every gated
    charge/discharge pair is complementary within ``comp_tol`` (binaries then
    round consistently).  Interior-point relaxations can leave pairs at the
    1e-6 scale instead; in that case the binaries are rounded by dominance
    and the program re-solved with them pinned, accepted when it matches the
    relaxation bound within ``mip_gap``.  Only when that dive misses does
    best-first branching on the binaries run, to the same relative gap.
    """
    base = dict(overrides or {})
    free = prog.free_binaries(base)
    if not free:
        return _solve(prog, base, feas_tol)

    root = _solve(prog, base, feas_tol)
    repaired = _repair(prog, root, free, comp_tol, INT_TOL)
    if repaired is not None:
        return repaired

    gate_of = {psi: (c, d) for psi, c, d in prog.gates}
    dive = dict(base)
    for bvar in free:
        if bvar in gate_of:
            c, d = gate_of[bvar]
            val = 1.0 if root.x[c] > root.x[d] else 0.0
        else:
            val = round(root.x[bvar])
        dive[bvar] = (val, val)
    try:
        dived = _solve(prog, dive, feas_tol)
        if dived.objective_value <= root.objective_value + mip_gap * max(
            1.0, abs(root.objective_value)
        ):
            return dived
    except Infeasible:
        pass

    gate_by_psi = {psi: (c, d) for psi, c, d in prog.gates}
    counter = itertools.count()
    heap: list[tuple[float, int, dict[int, tuple[float, float]], Solution]] = []
    heapq.heappush(heap, (root.objective_value, next(counter), {}, root))
    incumbent: Solution | None = None
    nodes = 1

    def gap_bound() -> float:
        assert incumbent is not None
        return incumbent.objective_value - mip_gap * max(1.0, abs(incumbent.objective_value))

    while heap:
        bound, _, fixed, sol = heapq.heappop(heap)
        if incumbent is not None and bound >= gap_bound():
            break
        node_free = [b for b in free if b not in fixed]
        branch_var, score = node_free[0], -1.0
        for b in node_free:
            if b in gate_by_psi:
                c, d = gate_by_psi[b]
                s = min(sol.x[c], sol.x[d])
            else:
                s = 0.5 - abs(sol.x[b] - round(sol.x[b]))
            if s > score:
                branch_var, score = b, s
        for val in (0.0, 1.0):
            child_fixed = dict(fixed)
            child_fixed[branch_var] = (val, val)
            if nodes >= node_cap:
                raise BranchLimit(
                    f"branch-and-bound node cap {node_cap} exceeded",
                    best=incumbent,
                    bound=bound,
                )
            try:
                child = _solve(prog, {**base, **child_fixed}, feas_tol)
            except Infeasible:
                continue
            finally:
                nodes += 1
            if incumbent is not None and child.objective_value >= gap_bound():
                continue
            child_free = [b for b in free if b not in child_fixed]
            rep = _repair(prog, child, child_free, comp_tol, INT_TOL)
            if rep is not None:
                if incumbent is None or rep.objective_value < incumbent.objective_value:
                    incumbent = rep
            else:
                heapq.heappush(
                    heap, (child.objective_value, next(counter), child_fixed, child)
                )
    if incumbent is None:
        raise Infeasible("no integer-feasible point found")
    return incumbent
