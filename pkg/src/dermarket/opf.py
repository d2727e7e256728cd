"""Branch-flow (DistFlow) constraint block on a radial feeder.

Conventions, shared by every program that embeds the network:

* ``f_p[i,t]``, ``f_q[i,t]`` are receiving-end flows on the line feeding bus
  ``i`` (sending-end = receiving-end + line impedance times ``l``);
* ``l[i,t]`` is the squared current, ``v[i,t]`` the squared voltage;
* the root voltage is pinned to 1 pu and the root balance carries the slack
  injections ``g0p``/``g0q``;
* shunts consume ``G v`` of active power and inject ``B v`` of reactive;
* the nonconvex branch identity is relaxed to the rotated cone
  ``||(2 f_p, 2 f_q, v - l)|| <= v + l`` (tight at optimum on radial feeders
  whenever losses are penalized);
* apparent-power caps apply at both line ends; with ``soft_limits`` both
  share one nonnegative relaxation ``xi`` per line and slot, and the voltage
  band is relaxed by ``phi`` per bus and slot.

Balance rows are oriented so a tagged dual equals d(objective)/d(injection):
``("gamma", i, t, *extra)`` for active and ``("mu", i, t, *extra)`` for
reactive balances; flow caps carry ``("eta+"/"eta-", i, t, *extra)`` and the
rotated cone ``("cone", i, t, *extra)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .network import NetworkModel
from .solver import ConicProgram

Affine = tuple[list[tuple[int, float]], float]

ROOT_V_SQ = 1.0


@dataclass
class NetVars:
    v: dict[tuple[int, int], int] = field(default_factory=dict)
    f_p: dict[tuple[int, int], int] = field(default_factory=dict)
    f_q: dict[tuple[int, int], int] = field(default_factory=dict)
    l: dict[tuple[int, int], int] = field(default_factory=dict)
    g0p: dict[int, int] = field(default_factory=dict)
    g0q: dict[int, int] = field(default_factory=dict)
    xi: dict[tuple[int, int], int] = field(default_factory=dict)
    phi: dict[tuple[int, int], int] = field(default_factory=dict)


def add_network_block(
    prog: ConicProgram,
    net: NetworkModel,
    slots: Sequence[int],
    injections_p: Mapping[tuple[int, int], Affine],
    injections_q: Mapping[tuple[int, int], Affine],
    g0_cost: Mapping[int, float],
    soft_limits: bool = False,
    varpi: float = 0.0,
    tau: float = 0.0,
    slack_cost_dt: float = 1.0,
    tag_extra: tuple = (),
    name_suffix: str = "",
) -> NetVars:
    """Emit all DistFlow rows for the given slots.

    ``injections_p/q[(i, t)]`` give bus ``i``'s net injection in per-unit as
    an affine expression (terms, const); missing keys mean zero.  ``g0_cost``
    maps each slot to the objective coefficient on the slack active
    injection.  With ``soft_limits`` the slack variables are priced at
    ``varpi``/``tau`` times ``slack_cost_dt``.
    """
    nv = NetVars()
    zero: Affine = ([], 0.0)
    sfx = name_suffix

    for t in slots:
        for bus in net.buses:
            lo, hi = bus.v_min_sq, bus.v_max_sq
            if bus.parent is None:
                lo = hi = ROOT_V_SQ
            elif soft_limits:
                lo, hi = 0.0, float("inf")
            nv.v[(bus.id, t)] = prog.add_var(f"v[{bus.id},{t}{sfx}]", lb=lo, ub=hi)
            if soft_limits:
                nv.phi[(bus.id, t)] = prog.add_var(
                    f"phi[{bus.id},{t}{sfx}]", lb=0.0, ub=bus.v_min_sq,
                    cost=tau * slack_cost_dt,
                )
        nv.g0p[t] = prog.add_var(
            f"g0p[{t}{sfx}]", lb=net.slack.g_p_min, ub=net.slack.g_p_max,
            cost=g0_cost.get(t, 0.0),
        )
        nv.g0q[t] = prog.add_var(
            f"g0q[{t}{sfx}]", lb=net.slack.g_q_min, ub=net.slack.g_q_max
        )
        for i in net.non_root_ids:
            nv.f_p[(i, t)] = prog.add_var(f"fp[{i},{t}{sfx}]")
            nv.f_q[(i, t)] = prog.add_var(f"fq[{i},{t}{sfx}]")
            nv.l[(i, t)] = prog.add_var(f"l[{i},{t}{sfx}]", lb=0.0)
            if soft_limits:
                nv.xi[(i, t)] = prog.add_var(
                    f"xi[{i},{t}{sfx}]", lb=0.0, cost=varpi * slack_cost_dt
                )

    for t in slots:
        for bus in net.buses:
            i = bus.id
            hp_terms, hp_const = injections_p.get((i, t), zero)
            hq_terms, hq_const = injections_q.get((i, t), zero)
            # active: received + h - G v = sum_child (f_child + r*l_child)
            terms = [(nv.g0p[t], -1.0)] if bus.parent is None else [(nv.f_p[(i, t)], -1.0)]
            if bus.g_shunt:
                terms.append((nv.v[(i, t)], bus.g_shunt))
            for j in bus.children:
                line = net.line(j)
                terms.append((nv.f_p[(j, t)], 1.0))
                terms.append((nv.l[(j, t)], line.r))
            terms.extend((idx, -c) for idx, c in hp_terms)
            prog.add_eq(terms, hp_const, tag=("gamma", i, t, *tag_extra))
            # reactive: received + h + B v = sum_child (f_child + x*l_child)
            terms = [(nv.g0q[t], -1.0)] if bus.parent is None else [(nv.f_q[(i, t)], -1.0)]
            if bus.b_shunt:
                terms.append((nv.v[(i, t)], -bus.b_shunt))
            for j in bus.children:
                line = net.line(j)
                terms.append((nv.f_q[(j, t)], 1.0))
                terms.append((nv.l[(j, t)], line.x))
            terms.extend((idx, -c) for idx, c in hq_terms)
            prog.add_eq(terms, hq_const, tag=("mu", i, t, *tag_extra))

        for i in net.non_root_ids:
            bus = net.bus(i)
            line = net.line(i)
            fp, fq, lsq = nv.f_p[(i, t)], nv.f_q[(i, t)], nv.l[(i, t)]
            # voltage drop toward the parent
            prog.add_eq(
                [(nv.v[(i, t)], 1.0), (fp, 2.0 * line.r), (fq, 2.0 * line.x),
                 (lsq, line.r ** 2 + line.x ** 2),
                 (nv.v[(bus.parent, t)], -1.0)],
                0.0,
            )
            # rotated cone ||(2fp, 2fq, v - l)|| <= v + l
            prog.add_soc(
                [(nv.v[(i, t)], 1.0), (lsq, 1.0)],
                0.0,
                [([(fp, 2.0)], 0.0), ([(fq, 2.0)], 0.0),
                 ([(nv.v[(i, t)], 1.0), (lsq, -1.0)], 0.0)],
                tag=("cone", i, t, *tag_extra),
            )
            cap_terms = [(nv.xi[(i, t)], 1.0)] if soft_limits else []
            cap = line.s_max ** 2
            prog.add_quad_le(
                [([(fp, 1.0)], 0.0), ([(fq, 1.0)], 0.0)],
                cap_terms, cap, tag=("eta+", i, t, *tag_extra),
            )
            prog.add_quad_le(
                [([(fp, 1.0), (lsq, line.r)], 0.0),
                 ([(fq, 1.0), (lsq, line.x)], 0.0)],
                cap_terms, cap, tag=("eta-", i, t, *tag_extra),
            )
            # valid bound l <= |S|^2 / v <= (cap + slack) / v_min: never cuts
            # a physical point but stops the relaxation from inflating the
            # squared current to burn power under a binding flow cap
            prog.add_le(
                [(lsq, bus.v_min_sq)] + [(idx, -c) for idx, c in cap_terms],
                cap,
            )
            if soft_limits:
                phi = nv.phi[(i, t)]
                prog.add_le([(nv.v[(i, t)], -1.0), (phi, -1.0)], -bus.v_min_sq)
                prog.add_le([(nv.v[(i, t)], 1.0), (phi, -1.0)], bus.v_max_sq)
    return nv


@dataclass
class FlowState:
    """Realized network quantities of one solved scenario/slot block."""

    v: dict[tuple[int, int], float]
    f_p: dict[tuple[int, int], float]
    f_q: dict[tuple[int, int], float]
    l: dict[tuple[int, int], float]
    g0p: dict[int, float]
    g0q: dict[int, float]


def extract_flows(solution, nv: NetVars) -> FlowState:
    val = solution.value
    return FlowState(
        v={k: val(i) for k, i in nv.v.items()},
        f_p={k: val(i) for k, i in nv.f_p.items()},
        f_q={k: val(i) for k, i in nv.f_q.items()},
        l={k: val(i) for k, i in nv.l.items()},
        g0p={t: val(i) for t, i in nv.g0p.items()},
        g0q={t: val(i) for t, i in nv.g0q.items()},
    )
