"""Radial feeder model: buses, lines, slack bus, and household-to-bus mapping.

All electrical quantities are stored in per-unit on ``base_mva`` (default
1 MVA); household kW values are converted at this module's boundary via
:meth:`NetworkModel.kw_to_pu`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .errors import ParseError, UnknownHousehold, ValidationError

DEFAULT_V_MIN_SQ = 0.81  # 0.9 pu lower band, squared
DEFAULT_V_MAX_SQ = 1.21  # 1.1 pu upper band, squared


@dataclass(frozen=True)
class Bus:
    id: int
    parent: int | None
    children: tuple[int, ...]
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_min_sq: float = DEFAULT_V_MIN_SQ
    v_max_sq: float = DEFAULT_V_MAX_SQ


@dataclass(frozen=True)
class Line:
    """Line into ``to_bus`` from its parent; indexed by the receiving bus."""

    to_bus: int
    r: float
    x: float
    s_max: float


@dataclass(frozen=True)
class SlackBusSpec:
    g_p_min: float
    g_p_max: float
    g_q_min: float
    g_q_max: float


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack: SlackBusSpec
    base_mva: float = 1.0
    bus_households: Mapping[int, frozenset[str]] = field(default_factory=dict)

    def bus(self, bus_id: int) -> Bus:
        return self._bus_index[bus_id]

    def line(self, bus_id: int) -> Line:
        """The unique line feeding ``bus_id`` (non-root buses only)."""
        return self._line_index[bus_id]

    @cached_property
    def _bus_index(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def _line_index(self) -> dict[int, Line]:
        return {ln.to_bus: ln for ln in self.lines}

    @property
    def non_root_ids(self) -> list[int]:
        return [b.id for b in self.buses if b.parent is not None]

    def household_bus(self, household: str) -> int:
        for bus_id, members in self.bus_households.items():
            if household in members:
                return bus_id
        raise UnknownHousehold(f"household {household!r} not mapped to any bus")

    def kw_to_pu(self, kw: float) -> float:
        return kw / (1000.0 * self.base_mva)


def validate_radial(net: NetworkModel) -> list[str]:
    """Structural violations; empty iff a consistent tree rooted at bus 0."""
    violations: list[str] = []
    by_id: dict[int, Bus] = {}
    for bus in net.buses:
        if bus.id in by_id:
            violations.append(f"duplicate bus id {bus.id}")
        by_id[bus.id] = bus

    roots = [b for b in net.buses if b.parent is None]
    if len(roots) != 1 or (roots and roots[0].id != 0):
        violations.append(
            f"expected exactly one root with id 0, found {[b.id for b in roots]}"
        )
    for bus in net.buses:
        if bus.parent is not None and bus.parent not in by_id:
            violations.append(f"bus {bus.id} references missing parent {bus.parent}")
        if not (0.0 < bus.v_min_sq < bus.v_max_sq):
            violations.append(f"bus {bus.id} voltage band invalid")
        for child in bus.children:
            if child not in by_id or by_id[child].parent != bus.id:
                violations.append(f"bus {bus.id} child list inconsistent at {child}")
    for bus in net.buses:
        if bus.parent is not None and bus.id not in by_id.get(bus.parent, bus).children:
            violations.append(f"bus {bus.id} missing from parent {bus.parent} children")

    seen_lines: set[int] = set()
    for line in net.lines:
        if line.to_bus in seen_lines:
            violations.append(f"duplicate line into bus {line.to_bus}")
        seen_lines.add(line.to_bus)
        if line.to_bus not in by_id or by_id[line.to_bus].parent is None:
            violations.append(f"line into bus {line.to_bus} has no matching non-root bus")
        if line.r < 0 or line.x < 0 or line.s_max <= 0:
            violations.append(f"line into bus {line.to_bus} has invalid parameters")
    for bus in net.buses:
        if bus.parent is not None and bus.id not in seen_lines:
            violations.append(f"bus {bus.id} has no line from parent {bus.parent}")
    if len(net.lines) > len(net.buses) - 1:
        violations.append("line count exceeds radial bound")

    # reachability and cycles from bus 0
    if 0 in by_id:
        seen: set[int] = set()
        stack = [0]
        while stack:
            node = stack.pop()
            if node in seen:
                violations.append(f"cycle detected at bus {node}")
                break
            seen.add(node)
            stack.extend(by_id[node].children if node in by_id else ())
        unreachable = [bus.id for bus in net.buses if bus.id not in seen]
        for bus_id in unreachable:
            violations.append(f"bus {bus_id} unreachable from root")
        # an unreachable bus whose parent chain revisits itself sits on a cycle
        flagged: set[int] = set()
        for bus_id in unreachable:
            trail: list[int] = []
            node: int | None = bus_id
            while node is not None and node in by_id and node not in trail:
                trail.append(node)
                node = by_id[node].parent
            if node in trail and node not in flagged:
                flagged.update(trail[trail.index(node):])
                violations.append(f"cycle through bus {node}")
    return violations


def _check(net: NetworkModel) -> NetworkModel:
    violations = validate_radial(net)
    if violations:
        raise ValidationError("; ".join(violations))
    seen: dict[str, int] = {}
    for bus_id, members in net.bus_households.items():
        for hh in members:
            if hh in seen:
                raise ValidationError(
                    f"household {hh!r} mapped to buses {seen[hh]} and {bus_id}"
                )
            seen[hh] = bus_id
    if net.base_mva <= 0:
        raise ValidationError("base_mva must be positive")
    if net.slack.g_p_min > net.slack.g_p_max or net.slack.g_q_min > net.slack.g_q_max:
        raise ValidationError("slack bus bounds inverted")
    return net


def build_network(
    buses: Iterable[dict],
    slack: dict,
    base_mva: float = 1.0,
) -> NetworkModel:
    """Assemble and validate a NetworkModel from plain dict rows."""
    rows = list(buses)
    children: dict[int, list[int]] = {row["id"]: [] for row in rows}
    for row in rows:
        parent = row.get("parent")
        if parent is not None:
            children.setdefault(parent, []).append(row["id"])
    bus_objs = []
    lines = []
    households: dict[int, frozenset[str]] = {}
    for row in rows:
        bus_objs.append(
            Bus(
                id=row["id"],
                parent=row.get("parent"),
                children=tuple(sorted(children.get(row["id"], []))),
                g_shunt=row.get("g_shunt", 0.0),
                b_shunt=row.get("b_shunt", 0.0),
                v_min_sq=row.get("v_min_sq") or DEFAULT_V_MIN_SQ,
                v_max_sq=row.get("v_max_sq") or DEFAULT_V_MAX_SQ,
            )
        )
        line = row.get("line")
        if row.get("parent") is None:
            if line is not None:
                raise ValidationError(f"root bus {row['id']} must not carry a line")
        else:
            if line is None:
                raise ValidationError(f"bus {row['id']} missing its line record")
            lines.append(
                Line(to_bus=row["id"], r=line["r"], x=line["x"], s_max=line["s_max"])
            )
        if row.get("households"):
            households[row["id"]] = frozenset(row["households"])
    net = NetworkModel(
        buses=tuple(sorted(bus_objs, key=lambda b: b.id)),
        lines=tuple(sorted(lines, key=lambda ln: ln.to_bus)),
        slack=SlackBusSpec(
            g_p_min=slack["g_p_min"],
            g_p_max=slack["g_p_max"],
            g_q_min=slack["g_q_min"],
            g_q_max=slack["g_q_max"],
        ),
        base_mva=base_mva,
        bus_households=households,
    )
    return _check(net)


def load_network(path: str) -> NetworkModel:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read network file {path}: {exc}") from exc
    try:
        return build_network(
            raw["buses"], raw["slack"], base_mva=raw.get("base_mva", 1.0)
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"network file {path} violates schema: {exc!r}") from exc


def save_network(net: NetworkModel, path: str) -> None:
    rows = []
    for bus in net.buses:
        row = {
            "id": bus.id,
            "parent": bus.parent,
            "g_shunt": bus.g_shunt,
            "b_shunt": bus.b_shunt,
            "v_min_sq": bus.v_min_sq,
            "v_max_sq": bus.v_max_sq,
            "line": None,
            "households": sorted(net.bus_households.get(bus.id, ())),
        }
        if bus.parent is not None:
            line = net.line(bus.id)
            row["line"] = {"r": line.r, "x": line.x, "s_max": line.s_max}
        rows.append(row)
    payload = {
        "base_mva": net.base_mva,
        "slack": {
            "g_p_min": net.slack.g_p_min,
            "g_p_max": net.slack.g_p_max,
            "g_q_min": net.slack.g_q_min,
            "g_q_max": net.slack.g_q_max,
        },
        "buses": rows,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def map_household_injections(
    net: NetworkModel,
    injections: Mapping[str, tuple[float, float]],
) -> tuple[dict[int, float], dict[int, float]]:
    """Aggregate per-household (P, Q) onto buses: h_i = sum over its members.

    Returns per-bus active and reactive totals in the input's units; buses
    without households get 0.
    """
    h_p = {bus.id: 0.0 for bus in net.buses}
    h_q = {bus.id: 0.0 for bus in net.buses}
    owner = {
        hh: bus_id for bus_id, members in net.bus_households.items() for hh in members
    }
    for household, (p, q) in injections.items():
        if household not in owner:
            raise UnknownHousehold(f"household {household!r} not mapped to any bus")
        h_p[owner[household]] += p
        h_q[owner[household]] += q
    return h_p, h_q
