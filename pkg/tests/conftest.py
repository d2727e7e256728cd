"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the library's solver path: the power
flow is a plain backward/forward sweep, and mixed-binary references come
from exhaustive enumeration.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from dermarket.community import BatterySpec, HouseholdSpec
from dermarket.dayahead import TariffSchedule
from dermarket.network import NetworkModel, build_network
from dermarket.solver import solve_continuous
from dermarket.errors import Infeasible


SLACK = {"g_p_min": -5.0, "g_p_max": 5.0, "g_q_min": -5.0, "g_q_max": 5.0}


def make_radial_net(parents, r=0.01, x=0.01, s_max=1.0, households=None, **bus_kw):
    """Small radial feeder from a {bus: parent} map (bus 0 implicit root)."""
    rows = [{"id": 0, "parent": None, "line": None,
             "households": (households or {}).get(0, [])}]
    for bus, parent in sorted(parents.items()):
        rows.append(
            {
                "id": bus,
                "parent": parent,
                "line": {
                    "r": r if np.isscalar(r) else r[bus],
                    "x": x if np.isscalar(x) else x[bus],
                    "s_max": s_max if np.isscalar(s_max) else s_max[bus],
                },
                "households": (households or {}).get(bus, []),
                **bus_kw,
            }
        )
    return build_network(rows, SLACK)


@pytest.fixture
def two_bus_net():
    return make_radial_net({1: 0}, households={1: ["a"]})


@pytest.fixture
def three_bus_net():
    return make_radial_net({1: 0, 2: 1}, households={1: ["a"], 2: ["b"]})


def small_battery(**overrides) -> BatterySpec:
    base = dict(eta=0.95, e_min=0.64, e_max=13.5, p_max=3.3,
                e_initial=0.64, e_final=0.64, dt=1.0)
    base.update(overrides)
    return BatterySpec(**base)


def make_household(hh_id, bus, partners=(), **battery_overrides) -> HouseholdSpec:
    return HouseholdSpec(
        id=hh_id, bus=bus, battery=small_battery(**battery_overrides),
        partners=frozenset(partners),
    )


def flat_tariff(n_slots, buy=0.2, sell=0.05) -> TariffSchedule:
    return TariffSchedule(buy=np.full(n_slots, buy), sell=np.full(n_slots, sell))


# ---------------------------------------------------------------------------
# backward/forward sweep power flow (receiving-end convention)
# ---------------------------------------------------------------------------

def sweep_power_flow(net: NetworkModel, h_p, h_q, tol=1e-12, max_iter=200):
    """Fixed-point AC power flow on the radial feeder.

    ``h_p``/``h_q`` map bus id -> net injection (pu).  Returns dicts of
    receiving-end flows, squared currents and squared voltages, plus the
    slack injections.  Entirely independent of the optimization stack.
    """
    order = []
    stack = [0]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(net.bus(node).children)
    v = {i: 1.0 for i in (b.id for b in net.buses)}
    l = {i: 0.0 for i in net.non_root_ids}
    f_p = {i: 0.0 for i in net.non_root_ids}
    f_q = {i: 0.0 for i in net.non_root_ids}
    for _ in range(max_iter):
        # backward: receiving-end flows from the leaves up
        for i in reversed(order):
            if i == 0:
                continue
            bus = net.bus(i)
            p = -h_p.get(i, 0.0) + bus.g_shunt * v[i]
            q = -h_q.get(i, 0.0) - bus.b_shunt * v[i]
            for j in bus.children:
                line_j = net.line(j)
                p += f_p[j] + line_j.r * l[j]
                q += f_q[j] + line_j.x * l[j]
            f_p[i], f_q[i] = p, q
            l[i] = (p * p + q * q) / v[i]
        # forward: voltages from the root down
        delta = 0.0
        for i in order:
            if i == 0:
                continue
            line = net.line(i)
            parent = net.bus(i).parent
            new_v = (
                v[parent]
                - 2.0 * (line.r * f_p[i] + line.x * f_q[i])
                - (line.r ** 2 + line.x ** 2) * l[i]
            )
            delta = max(delta, abs(new_v - v[i]))
            v[i] = new_v
        if delta < tol:
            break
    root = net.bus(0)
    g0p = root.g_shunt * v[0] - h_p.get(0, 0.0)
    g0q = -root.b_shunt * v[0] - h_q.get(0, 0.0)
    for j in root.children:
        line_j = net.line(j)
        g0p += f_p[j] + line_j.r * l[j]
        g0q += f_q[j] + line_j.x * l[j]
    return {"v": v, "l": l, "f_p": f_p, "f_q": f_q, "g0p": g0p, "g0q": g0q}


# ---------------------------------------------------------------------------
# exhaustive mixed-binary reference
# ---------------------------------------------------------------------------

def enumerate_binaries(prog):
    """Global optimum by trying every binary assignment (<= 12 binaries)."""
    bins = prog.binary_indices()
    assert len(bins) <= 12
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(bins)):
        overrides = {b: (v, v) for b, v in zip(bins, bits)}
        try:
            sol = solve_continuous(prog, overrides)
        except Infeasible:
            continue
        if best is None or sol.objective_value < best.objective_value:
            best = sol
    return best


def assert_close(a, b, tol=1e-6, rel=0.0):
    assert abs(a - b) <= tol + rel * max(abs(a), abs(b)), f"{a} vs {b}"
