"""Real-time clearing: per-slot redispatch against realized PV and demand.

Each slot solves one deterministic program over the whole community and
network: battery adjustments on top of the day-ahead schedule (charge and
discharge modes stay as committed), realized trades and grid exchange, hard
network constraints, and a penalty on deviating from the day-ahead stored
energy path.  Slots run in order, threading the realized stored energy
forward; the final slot must land on the committed terminal energy so a
full-horizon execution is always feasible for the perfect-information
benchmark's constraint set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .community import HouseholdSpec, TradeLedger, validate_partners
from .dayahead import (
    DayAheadResult,
    MarketParams,
    PriceBook,
    TariffSchedule,
    compute_nodal_prices,
    price_book_for,
    update_bilateral_price,
)
from .errors import ConfigError, DimensionMismatch, Infeasible
from .network import NetworkModel
from .opf import FlowState, add_network_block, extract_flows
from .scenarios import Realization
from .solver import ConicProgram, Solution, solve_continuous, solve_mixed, write_lp

log = logging.getLogger(__name__)

VIOLATION_TOL = 1e-7


def soc_deviation(e_da: float, e_rt: float) -> float:
    """Planned minus realized stored energy; positive means under-charged."""
    return e_da - e_rt


@dataclass
class RealTimeAdjustment:
    e_bc: float
    e_bd: float
    soc_rt: float
    soc_dev: float


@dataclass
class RealTimeResult:
    slot: int
    trades: TradeLedger
    flows: FlowState
    prices: PriceBook
    cost: float                 # objective of the slot program
    energy_cost: float          # grid cost without the deviation penalty
    adjustments: dict[str, RealTimeAdjustment]
    binding: list = field(default_factory=list)
    flow_violation: float = 0.0
    volt_violation: float = 0.0

    @property
    def congested(self) -> bool:
        return self.flow_violation > VIOLATION_TOL or self.volt_violation > VIOLATION_TOL


@dataclass
class P3Build:
    prog: ConicProgram
    households: list[HouseholdSpec]
    slot: int
    vars: dict
    netvars: object
    theta: float


def build_p3(
    net: NetworkModel,
    households: Sequence[HouseholdSpec],
    day_ahead: DayAheadResult,
    realization: Mapping[str, tuple[float, float]],
    tariff: TariffSchedule,
    theta: float,
    t: int,
    soc_now: Mapping[str, float],
    re_decide_mode: bool = False,
    soft_limits: bool = False,
    params: MarketParams = MarketParams(),
) -> P3Build:
    """Single-slot clearing program.

    ``realization[h] = (pv_kw, demand_kw)`` for slot ``t``; ``soc_now`` is
    the realized stored energy entering the slot.  The day-ahead charge,
    discharge and mode of slot ``t`` are constants; the adjustment pair moves
    within the committed mode's headroom unless ``re_decide_mode`` reopens
    the binary.  ``soft_limits`` swaps hard network limits for the penalized
    relaxation (diagnostic mode used by method comparisons).
    """
    households = sorted(households, key=lambda h: h.id)
    validate_partners(households)
    missing = [h.id for h in households if h.id not in realization]
    if missing:
        raise DimensionMismatch(f"realization misses households {missing}")
    prog = ConicProgram()
    dt = day_ahead.dt
    hh_vars: dict[str, dict] = {}
    for hh in households:
        b = hh.battery
        state = day_ahead.ess_schedule[hh.id]
        p_bc, p_bd = float(state.charge[t]), float(state.discharge[t])
        psi = float(state.mode[t]) if len(state.mode) else 0.0
        pv, demand = realization[hh.id]
        v: dict = {}
        if re_decide_mode and b.p_max > 0:
            psi_var = prog.add_var(f"psi[{hh.id}]", binary=True)
            v["psi"] = psi_var
            e_bc = prog.add_var(f"ebc[{hh.id}]", lb=-p_bc)
            e_bd = prog.add_var(f"ebd[{hh.id}]", lb=-p_bd)
            prog.add_le([(e_bc, 1.0), (psi_var, -b.p_max)], -p_bc)
            prog.add_le([(e_bd, 1.0), (psi_var, b.p_max)], b.p_max - p_bd)
            prog.mark_gate(psi_var, e_bc, e_bd)
        else:
            # committed mode: total charge in [0, psi*p_max], discharge in
            # [0, (1-psi)*p_max]
            e_bc = prog.add_var(
                f"ebc[{hh.id}]", lb=-p_bc, ub=psi * b.p_max - p_bc
            )
            e_bd = prog.add_var(
                f"ebd[{hh.id}]", lb=-p_bd, ub=(1.0 - psi) * b.p_max - p_bd
            )
        # the committed plan ends at e_final, so the deviation penalty already
        # anchors the last slot; a hard terminal equality would force any
        # carried deviation to dump through the network in one slot
        soc_next = prog.add_var(f"Ert[{hh.id}]", lb=b.e_min, ub=b.e_max)
        prog.add_eq(
            [(soc_next, 1.0), (e_bc, -b.eta * b.dt), (e_bd, b.dt / b.eta)],
            float(soc_now[hh.id]) + (b.eta * p_bc - p_bd / b.eta) * b.dt,
        )
        # deviation from the day-ahead path, split for the absolute value
        dev_pos = prog.add_var(f"dev+[{hh.id}]", lb=0.0, cost=theta)
        dev_neg = prog.add_var(f"dev-[{hh.id}]", lb=0.0, cost=theta)
        e_da_next = float(state.soc[t + 1])
        prog.add_eq(
            [(dev_pos, 1.0), (dev_neg, -1.0), (soc_next, 1.0)], e_da_next
        )
        s0 = prog.add_var(f"s0[{hh.id}]", lb=0.0, cost=-float(tariff.sell[t]) * dt)
        b0 = prog.add_var(f"b0[{hh.id}]", lb=0.0, cost=float(tariff.buy[t]) * dt)
        q = -hh.reactive_ratio * demand
        pp = prog.add_var(f"pP[{hh.id}]")
        pq = prog.add_var(f"pQ[{hh.id}]", lb=q, ub=q)
        # realized balance: P = pv + (p_bd + e_bd) - demand - (p_bc + e_bc)
        prog.add_eq(
            [(pp, 1.0), (e_bd, -1.0), (e_bc, 1.0)],
            pv + p_bd - demand - p_bc,
        )
        split = [(pp, 1.0), (s0, -1.0), (b0, 1.0)]
        sell, buy, netv = {}, {}, {}
        for m in sorted(hh.partners):
            s = prog.add_var(f"s[{hh.id},{m}]", lb=0.0)
            bb = prog.add_var(f"b[{hh.id},{m}]", lb=0.0)
            tr = prog.add_var(f"T[{hh.id},{m}]")
            prog.add_eq([(tr, 1.0), (s, -1.0), (bb, 1.0)], 0.0)
            split.extend([(s, -1.0), (bb, 1.0)])
            sell[m], buy[m], netv[m] = s, bb, tr
        prog.add_eq(split, 0.0)
        v.update(
            e_bc=e_bc, e_bd=e_bd, soc_next=soc_next, dev_pos=dev_pos,
            dev_neg=dev_neg, s0=s0, b0=b0, pp=pp, pq=pq,
            sell=sell, buy=buy, net=netv,
            p_bc=p_bc, p_bd=p_bd,
        )
        hh_vars[hh.id] = v

    for hh in households:
        for m in sorted(hh.partners):
            if m <= hh.id:
                continue
            prog.add_eq(
                [(hh_vars[hh.id]["sell"][m], 1.0), (hh_vars[m]["buy"][hh.id], -1.0)], 0.0
            )
            prog.add_eq(
                [(hh_vars[m]["sell"][hh.id], 1.0), (hh_vars[hh.id]["buy"][m], -1.0)], 0.0
            )

    owner = {hh: bus for bus, members in net.bus_households.items() for hh in members}
    injections_p: dict[tuple[int, int], tuple[list, float]] = {}
    injections_q: dict[tuple[int, int], tuple[list, float]] = {}
    scale = 1.0 / (1000.0 * net.base_mva)
    for hh in households:
        bus = owner[hh.id]
        terms_p, const_p = injections_p.setdefault((bus, t), ([], 0.0))
        terms_p.append((hh_vars[hh.id]["pp"], scale))
        terms_q, const_q = injections_q.setdefault((bus, t), ([], 0.0))
        terms_q.append((hh_vars[hh.id]["pq"], scale))
    netvars = add_network_block(
        prog,
        net,
        [t],
        injections_p,
        injections_q,
        g0_cost={t: float(tariff.buy[t]) * dt},
        soft_limits=soft_limits,
        varpi=params.varpi,
        tau=params.tau,
        slack_cost_dt=dt,
        tag_extra=(),
        name_suffix="",
    )
    return P3Build(prog, households, t, hh_vars, netvars, theta)


def _realized_prices(
    net: NetworkModel,
    households: Sequence[HouseholdSpec],
    flows: FlowState,
    duals,
    tariff: TariffSchedule,
    rho: float,
    t: int,
) -> PriceBook:
    """One-shot locational prices from the slot program's multipliers."""
    book = price_book_for(tariff)
    nodal = compute_nodal_prices(net, flows, duals, [t])
    book.nodal = {(i, tt, 0, 0): lam for (i, tt), lam in nodal.items()}
    owner = {hh: bus for bus, members in net.bus_households.items() for hh in members}
    for hh in households:
        for m in sorted(hh.partners):
            if m <= hh.id:
                continue
            key = (*PriceBook.pair(hh.id, m), t, 0, 0)
            book.elp[key] = update_bilateral_price(
                0.0, rho, nodal[(owner[hh.id], t)], nodal[(owner[m], t)]
            )
    return book


def _slot_result(
    build: P3Build,
    sol: Solution,
    net: NetworkModel,
    tariff: TariffSchedule,
    rho: float,
) -> RealTimeResult:
    t = build.slot
    dt = build.households[0].battery.dt
    trades = TradeLedger(n_slots=1)
    adjustments = {}
    energy_cost = 0.0
    for hh in build.households:
        v = build.vars[hh.id]
        trades.grid_sell[(hh.id, t)] = sol.value(v["s0"])
        trades.grid_buy[(hh.id, t)] = sol.value(v["b0"])
        for m, idx in v["sell"].items():
            trades.sell[(hh.id, m, t)] = sol.value(idx)
        for m, idx in v["buy"].items():
            trades.buy[(hh.id, m, t)] = sol.value(idx)
        soc_rt = sol.value(v["soc_next"])
        adjustments[hh.id] = RealTimeAdjustment(
            e_bc=sol.value(v["e_bc"]),
            e_bd=sol.value(v["e_bd"]),
            soc_rt=soc_rt,
            soc_dev=sol.value(v["dev_pos"]) - sol.value(v["dev_neg"]),
        )
        energy_cost += (
            float(tariff.buy[t]) * trades.grid_buy[(hh.id, t)]
            - float(tariff.sell[t]) * trades.grid_sell[(hh.id, t)]
        ) * dt
    flows = extract_flows(sol, build.netvars)
    energy_cost += float(tariff.buy[t]) * flows.g0p[t] * dt
    nv = build.netvars
    flow_violation = max(
        [max(0.0, sol.value(i)) for i in nv.xi.values()], default=0.0
    )
    volt_violation = max(
        [max(0.0, sol.value(i)) for i in nv.phi.values()], default=0.0
    )
    binding = [
        tag
        for tag, slack in sol.cone_slacks.items()
        if tag[0] in ("eta+", "eta-") and slack < 1e-6
    ]
    prices = _realized_prices(
        net, build.households, flows, sol.duals, tariff, rho, t
    )
    return RealTimeResult(
        slot=t,
        trades=trades,
        flows=flows,
        prices=prices,
        cost=sol.objective_value,
        energy_cost=energy_cost,
        adjustments=adjustments,
        binding=binding,
        flow_violation=flow_violation,
        volt_violation=volt_violation,
    )


def run_real_time(
    net: NetworkModel,
    households: Sequence[HouseholdSpec],
    day_ahead: DayAheadResult,
    realizations: Mapping[str, Realization],
    tariff: TariffSchedule,
    theta: float = 50.0,
    params: MarketParams = MarketParams(),
    on_infeasible: str = "abort",
    re_decide_mode: bool = False,
    dump_lp_dir: str | None = None,
) -> list[RealTimeResult]:
    """Clear every slot in order, threading stored energy forward.

    ``on_infeasible="abort"`` re-raises the slot's infeasibility (partial
    results are attached to the exception); ``"relax"`` re-solves the slot
    with penalized network limits, records the violation and continues, so
    method comparisons can count congested slots instead of dying on the
    first one.
    """
    if on_infeasible not in ("abort", "relax"):
        raise ConfigError(f"unknown on_infeasible policy {on_infeasible!r}")
    households = sorted(households, key=lambda h: h.id)
    n_slots = day_ahead.n_slots
    for hh in households:
        if hh.id not in realizations:
            raise DimensionMismatch(f"no realization for household {hh.id}")
        if len(realizations[hh.id].pv) != n_slots:
            raise DimensionMismatch(f"realization horizon mismatch for {hh.id}")
    soc = {hh.id: hh.battery.e_initial for hh in households}
    results: list[RealTimeResult] = []
    for t in range(n_slots):
        realized = {
            hh.id: (float(realizations[hh.id].pv[t]), float(realizations[hh.id].demand[t]))
            for hh in households
        }
        build = build_p3(
            net, households, day_ahead, realized, tariff, theta, t, soc,
            re_decide_mode=re_decide_mode, params=params,
        )
        if dump_lp_dir:
            write_lp(build.prog, f"{dump_lp_dir}/p3_t{t}.lp")
        try:
            sol = (
                solve_mixed(build.prog) if re_decide_mode else solve_continuous(build.prog)
            )
            result = _slot_result(build, sol, net, tariff, params.rho)
        except Infeasible as exc:
            if on_infeasible == "abort":
                exc.partial_results = results  # type: ignore[attr-defined]
                raise
            log.warning("slot %d infeasible under hard limits (%s); relaxing", t, exc)
            build = build_p3(
                net, households, day_ahead, realized, tariff, theta, t, soc,
                re_decide_mode=re_decide_mode, soft_limits=True, params=params,
            )
            sol = (
                solve_mixed(build.prog) if re_decide_mode else solve_continuous(build.prog)
            )
            result = _slot_result(build, sol, net, tariff, params.rho)
        soc = {hh.id: result.adjustments[hh.id].soc_rt for hh in households}
        results.append(result)
    return results


def total_deviation(results: Sequence[RealTimeResult]) -> float:
    return sum(
        abs(adj.soc_dev) for res in results for adj in res.adjustments.values()
    )


def total_energy_cost(results: Sequence[RealTimeResult]) -> float:
    return sum(res.energy_cost for res in results)


def congested_slots(results: Sequence[RealTimeResult]) -> list[int]:
    return [res.slot for res in results if res.congested]
