"""In-memory representation of a mixed-binary conic program."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

INF = math.inf

Terms = Sequence[tuple[int, float]]


@dataclass
class _LinCon:
    terms: list[tuple[int, float]]
    rhs: float
    tag: Hashable | None


@dataclass
class _SocCon:
    """||rows||_2 <= head, every entry an affine expression (terms, const)."""

    head: tuple[list[tuple[int, float]], float]
    rows: list[tuple[list[tuple[int, float]], float]]
    tag: Hashable | None


@dataclass
class _QuadCapCon:
    """sum_k row_k^2 <= cap_const + cap_terms'x."""

    rows: list[tuple[list[tuple[int, float]], float]]
    cap_terms: list[tuple[int, float]]
    cap_const: float
    tag: Hashable | None


class ConicProgram:
    """Minimization program built incrementally by the market modules."""

    def __init__(self) -> None:
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: list[float] = []
        self.binary: list[bool] = []
        self.eqs: list[_LinCon] = []
        self.les: list[_LinCon] = []
        self.socs: list[_SocCon] = []
        self.quad_caps: list[_QuadCapCon] = []
        # (psi, charge, discharge) triples driving relax-and-repair acceptance
        self.gates: list[tuple[int, int, int]] = []
        self._tags: set[Hashable] = set()
        self._name_index: dict[str, int] = {}

    # ------------------------------------------------------------------
    # variables
    # ------------------------------------------------------------------
    def add_var(
        self,
        name: str,
        lb: float = -INF,
        ub: float = INF,
        cost: float = 0.0,
        binary: bool = False,
    ) -> int:
        if name in self._name_index:
            raise ValueError(f"duplicate variable name {name!r}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        idx = len(self.names)
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.cost.append(cost)
        self.binary.append(binary)
        self._name_index[name] = idx
        return idx

    def index_of(self, name: str) -> int:
        return self._name_index[name]

    def add_cost(self, idx: int, coef: float) -> None:
        self.cost[idx] += coef

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def has_cones(self) -> bool:
        return bool(self.socs or self.quad_caps)

    def binary_indices(self) -> list[int]:
        return [i for i, b in enumerate(self.binary) if b]

    def free_binaries(self, overrides: dict[int, tuple[float, float]] | None = None) -> list[int]:
        """Binaries not pinned to a single value by bounds or overrides."""
        out = []
        for i in self.binary_indices():
            lo, hi = (overrides or {}).get(i, (self.lb[i], self.ub[i]))
            if hi - lo > 1e-12:
                out.append(i)
        return out

    # ------------------------------------------------------------------
    # constraints
    # ------------------------------------------------------------------
    def _register(self, tag: Hashable | None) -> None:
        if tag is None:
            return
        if tag in self._tags:
            raise ValueError(f"duplicate dual tag {tag!r}")
        self._tags.add(tag)

    def add_eq(self, terms: Terms, rhs: float, tag: Hashable | None = None) -> None:
        self._register(tag)
        self.eqs.append(_LinCon(list(terms), rhs, tag))

    def add_le(self, terms: Terms, rhs: float, tag: Hashable | None = None) -> None:
        self._register(tag)
        self.les.append(_LinCon(list(terms), rhs, tag))

    def add_soc(
        self,
        head_terms: Terms,
        head_const: float,
        rows: Iterable[tuple[Terms, float]],
        tag: Hashable | None = None,
    ) -> None:
        """Membership ||(rows)||_2 <= head_terms'x + head_const."""
        self._register(tag)
        self.socs.append(
            _SocCon(
                (list(head_terms), head_const),
                [(list(t), c) for t, c in rows],
                tag,
            )
        )

    def add_quad_le(
        self,
        rows: Iterable[tuple[Terms, float]],
        cap_terms: Terms,
        cap_const: float,
        tag: Hashable | None = None,
    ) -> None:
        """Quadratic capacity sum_k row_k^2 <= cap_const + cap_terms'x."""
        self._register(tag)
        self.quad_caps.append(
            _QuadCapCon([(list(t), c) for t, c in rows], list(cap_terms), cap_const, tag)
        )

    def mark_gate(self, psi: int, charge: int, discharge: int) -> None:
        """Declare a charge/discharge pair gated by binary ``psi``."""
        self.gates.append((psi, charge, discharge))


@dataclass
class Solution:
    """Primal/dual outcome of one solve.

    ``duals`` follows the module convention (see package docstring);
    ``cone_duals`` holds the raw dual-cone vector of each tagged SOC
    membership and ``cone_slacks`` its primal slack head - ||rows||.
    """

    status: str  # "optimal" | "iteration_limit"
    objective_value: float
    x: np.ndarray
    duals: dict[Hashable, float] = field(default_factory=dict)
    cone_duals: dict[Hashable, np.ndarray] = field(default_factory=dict)
    cone_slacks: dict[Hashable, float] = field(default_factory=dict)

    def value(self, idx: int) -> float:
        return float(self.x[idx])


def _affine_str(terms: Terms, const: float, names: list[str]) -> str:
    parts = []
    for idx, coef in terms:
        parts.append(f"{coef:+.12g} {names[idx]}")
    if const or not parts:
        parts.append(f"{const:+.12g}")
    return " ".join(parts)


def write_lp(prog: ConicProgram, path: str) -> None:
    """Dump the program in CPLEX-LP text format (cones as quadratic rows)."""
    names = [n.replace(" ", "_") for n in prog.names]
    lines = ["Minimize", " obj: " + (_affine_str(
        [(i, c) for i, c in enumerate(prog.cost) if c], 0.0, names) or "0"),
        "Subject To"]
    for k, con in enumerate(prog.eqs):
        lines.append(f" e{k}: {_affine_str(con.terms, 0.0, names)} = {con.rhs:.12g}")
    for k, con in enumerate(prog.les):
        lines.append(f" i{k}: {_affine_str(con.terms, 0.0, names)} <= {con.rhs:.12g}")
    aux = 0
    quad_lines: list[str] = []
    for k, qc in enumerate(prog.quad_caps):
        sq = []
        for terms, const in qc.rows:
            if len(terms) == 1 and not const and terms[0][1] == 1.0:
                sq.append(f"{names[terms[0][0]]} ^2")
            else:
                # name an auxiliary equal to the affine row
                aname = f"_q{aux}"
                aux += 1
                names.append(aname)
                lines.append(
                    f" q{k}_{aname}: {_affine_str(terms, 0.0, names)} - {aname} = {-const:.12g}"
                )
                sq.append(f"{aname} ^2")
        cap = _affine_str([(i, -c) for i, c in qc.cap_terms], 0.0, names)
        quad_lines.append(
            f" qc{k}: [ " + " + ".join(sq) + " ] " + (cap and cap + " ") + f"<= {qc.cap_const:.12g}"
        )
    for k, soc in enumerate(prog.socs):
        sq = []
        for terms, const in soc.rows:
            aname = f"_s{aux}"
            aux += 1
            names.append(aname)
            lines.append(
                f" s{k}_{aname}: {_affine_str(terms, 0.0, names)} - {aname} = {-const:.12g}"
            )
            sq.append(f"{aname} ^2")
        hname = f"_h{aux}"
        aux += 1
        names.append(hname)
        head_terms, head_const = soc.head
        lines.append(
            f" s{k}_{hname}: {_affine_str(head_terms, 0.0, names)} - {hname} = {-head_const:.12g}"
        )
        quad_lines.append(f" qs{k}: [ " + " + ".join(sq) + f" - {hname} ^2 ] <= 0")
    lines.extend(quad_lines)
    lines.append("Bounds")
    for i in range(prog.n_vars):
        lo, hi = prog.lb[i], prog.ub[i]
        if lo == -INF and hi == INF:
            lines.append(f" {names[i]} free")
        else:
            lo_s = "-inf" if lo == -INF else f"{lo:.12g}"
            hi_s = "+inf" if hi == INF else f"{hi:.12g}"
            lines.append(f" {lo_s} <= {names[i]} <= {hi_s}")
    bins = prog.binary_indices()
    if bins:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[i] for i in bins))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
