"""Day-ahead market: stochastic dispatch, scenario AC-OPF, locational pricing.

The community operator's dispatch couples every (pv, demand) scenario pair
through shared battery schedules and minimizes expected grid cost plus the
bilateral trade terms.  The network operator re-clears each scenario as a
soft-limited DistFlow SOCP; its multipliers feed nodal scenario prices, which
accumulate into pair-wise locational adders and compose with the grid middle
price into the directional bilateral price applied at the next iteration.

Bilateral prices are directional: a seller trades at ``adder - mid`` and a
buyer at ``adder + mid``.  In the community objective the pair-wise adder
cancels (it is a transfer between the two parties), so each traded unit
costs the community exactly twice the middle price; the objective implements
that as separate coefficients on the sell and buy variables, which is the
exact convex form of the role-dependent price.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .community import (
    BatteryState,
    EssVars,
    ExchangeVars,
    HouseholdSpec,
    TradeLedger,
    build_household_block,
    enforce_reciprocity,
    extract_trades,
    validate_partners,
)
from .errors import ConfigError, DimensionMismatch, ParseError, ValidationError
from .network import NetworkModel
from .opf import FlowState, NetVars, add_network_block, extract_flows
from .scenarios import QuantileScenarioSet, check_same_grid
from .solver import ConicProgram, Solution, solve_continuous, solve_mixed, write_lp

log = logging.getLogger(__name__)

SLACK_ACTIVE_TOL = 1e-7
DENOM_TOL = 1e-9

def _c5_printed_term(f_q: float, l: float, r: float, x: float) -> float:
    """Fourth numerator term of the fifth coefficient, exactly as printed.

    The printed term annotates the squared current with a stray flow
    superscript (read here as the squared current itself) and squares
    (r^2 - x) where neighbouring terms use (r^2 - x^2); kept verbatim and
    isolated so the reading is auditable in one place.
    """
    return -4.0 * l * f_q * (r * r - x) ** 2


@dataclass(frozen=True)
class MarketParams:
    """Clearing-loop parameters (slack prices, price step, stop rules)."""

    varpi: float = 10.0
    tau: float = 10.0
    rho: float = 1.0
    k_max: int = 50
    eps_cost: float = 1e-6
    eps_slack: float = 1e-6
    theta: float = 50.0  # real-time deviation penalty, carried for the CLI

    def __post_init__(self):
        if min(self.varpi, self.tau, self.rho) <= 0 or self.k_max < 1:
            raise ValidationError("market parameters must be positive, k_max >= 1")


@dataclass(frozen=True)
class TariffSchedule:
    buy: np.ndarray
    sell: np.ndarray

    def __post_init__(self):
        buy = np.asarray(self.buy, dtype=float)
        sell = np.asarray(self.sell, dtype=float)
        object.__setattr__(self, "buy", buy)
        object.__setattr__(self, "sell", sell)
        if buy.shape != sell.shape or buy.ndim != 1:
            raise DimensionMismatch("tariff buy/sell must share one slot axis")
        if np.any(sell < 0) or np.any(buy < sell):
            raise ValidationError("tariff must satisfy buy >= sell >= 0 per slot")

    @property
    def n_slots(self) -> int:
        return len(self.buy)


def load_tariff_csv(path: str) -> TariffSchedule:
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["slot", "buy", "sell"]:
                raise ParseError(f"{path}: expected tariff CSV header slot,buy,sell")
            for rec in reader:
                if rec:
                    rows.append((int(rec[0]), float(rec[1]), float(rec[2])))
    except (OSError, ValueError, StopIteration) as exc:
        raise ParseError(f"cannot read tariff CSV {path}: {exc}") from exc
    rows.sort()
    return TariffSchedule(
        buy=np.asarray([r[1] for r in rows]), sell=np.asarray([r[2] for r in rows])
    )


def save_tariff_csv(tariff: TariffSchedule, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "buy", "sell"])
        for t in range(tariff.n_slots):
            writer.writerow([t, f"{tariff.buy[t]:.6g}", f"{tariff.sell[t]:.6g}"])


# ---------------------------------------------------------------------------
# pricing primitives
# ---------------------------------------------------------------------------

def grid_mid_price(tariff: TariffSchedule, t: int) -> float:
    """Middle of the buying and selling tariff."""
    return (float(tariff.buy[t]) + float(tariff.sell[t])) / 2.0


def update_bilateral_price(elp_prev: float, rho: float, lam_n: float, lam_m: float) -> float:
    """Accumulate the absolute nodal-price gap of the pair."""
    if rho <= 0:
        raise ValidationError("price step must be positive")
    return elp_prev + rho * abs(lam_n - lam_m)


def compose_iglp(elp: float, gmp: float, direction: str) -> float:
    """Directional bilateral price: seller adder-minus-mid, buyer plus-mid."""
    if direction == "seller":
        return elp - gmp
    if direction == "buyer":
        return elp + gmp
    raise ConfigError(f"direction must be seller or buyer, got {direction!r}")


@dataclass(frozen=True)
class DlmpCoefficients:
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0
    degenerate: bool = False


def dlmp_coefficients(
    f_p: float, f_q: float, l: float, r: float, x: float
) -> DlmpCoefficients:
    """Closed-form nodal price coefficients of one line at an OPF optimum.

    All five share the denominator ``(f_p^2+f_q^2) x - l f_q (r^2+x^2)``;
    near-zero denominators (zero-flow lines) return the degenerate flag
    instead of dividing.
    """
    for name, val in (("f_p", f_p), ("f_q", f_q), ("l", l), ("r", r), ("x", x)):
        if not math.isfinite(val):
            raise ValidationError(f"non-finite {name} in price coefficients")
    s2 = f_p * f_p + f_q * f_q
    denom = s2 * x - l * f_q * (r * r + x * x)
    if abs(denom) < DENOM_TOL:
        return DlmpCoefficients(degenerate=True)
    c1 = (s2 * x + l * f_q * (r * r - x * x) - 2.0 * l * f_p * r * x) / denom
    c2 = (s2 * r - l * f_q * (r * r + x * x)) / denom
    c3 = (s2 * x + l * f_q * (r * r - x * x) + 2.0 * l * f_q * r * x) / denom
    c4_num = 2.0 * (f_p ** 3 * r - f_q ** 3 * x) + 2.0 * f_p * f_q * (f_p * r - f_q * x)
    c4 = c4_num / denom
    c5 = (
        c4_num
        + 2.0 * l * l * (f_p * r ** 3 + f_q * x ** 3)
        + _c5_printed_term(f_q, l, r, x)
        + 4.0 * l * r * x * (f_p * f_p - f_q * f_q)
        + 2.0 * l * l * r * x * (f_p * r - f_q * x)
    ) / denom
    return DlmpCoefficients(c1, c2, c3, c4, c5)


def scenario_node_price(
    coeffs: DlmpCoefficients,
    gamma: float,
    mu: float,
    mu_parent: float,
    eta_plus: float,
    eta_minus: float,
) -> float:
    """Nodal scenario price; degenerate lines fall back to the energy dual."""
    if coeffs.degenerate:
        return gamma
    return (
        coeffs.c1 * gamma
        + coeffs.c2 * mu
        + coeffs.c3 * mu_parent
        + coeffs.c4 * eta_plus
        + coeffs.c5 * eta_minus
    )


@dataclass
class PriceBook:
    """Accumulated pair adders, nodal prices and the grid middle price."""

    gmp: np.ndarray
    elp: dict[tuple[str, str, int, int, int], float] = field(default_factory=dict)
    nodal: dict[tuple[int, int, int, int], float] = field(default_factory=dict)

    @staticmethod
    def pair(n: str, m: str) -> tuple[str, str]:
        return (n, m) if n <= m else (m, n)

    def elp_at(self, n: str, m: str, t: int, u: int, d: int) -> float:
        return self.elp.get((*self.pair(n, m), t, u, d), 0.0)

    def seller_price(self, n: str, m: str, t: int, u: int = 0, d: int = 0) -> float:
        return compose_iglp(self.elp_at(n, m, t, u, d), float(self.gmp[t]), "seller")

    def buyer_price(self, n: str, m: str, t: int, u: int = 0, d: int = 0) -> float:
        return compose_iglp(self.elp_at(n, m, t, u, d), float(self.gmp[t]), "buyer")


def price_book_for(tariff: TariffSchedule) -> PriceBook:
    return PriceBook(
        gmp=np.asarray([grid_mid_price(tariff, t) for t in range(tariff.n_slots)])
    )


def compute_nodal_prices(
    net: NetworkModel,
    flows: FlowState,
    duals: Mapping,
    slots: Sequence[int],
    tag_extra: tuple = (),
) -> dict[tuple[int, int], float]:
    """Nodal price per (bus, slot) from one scenario's OPF multipliers."""
    out: dict[tuple[int, int], float] = {}
    degenerate = 0
    for t in slots:
        out[(0, t)] = duals[("gamma", 0, t, *tag_extra)]
        for i in net.non_root_ids:
            line = net.line(i)
            parent = net.bus(i).parent
            coeffs = dlmp_coefficients(
                flows.f_p[(i, t)], flows.f_q[(i, t)], flows.l[(i, t)], line.r, line.x
            )
            degenerate += coeffs.degenerate
            out[(i, t)] = scenario_node_price(
                coeffs,
                duals[("gamma", i, t, *tag_extra)],
                duals[("mu", i, t, *tag_extra)],
                duals[("mu", parent, t, *tag_extra)],
                duals[("eta+", i, t, *tag_extra)],
                duals[("eta-", i, t, *tag_extra)],
            )
    if degenerate:
        log.info("nodal pricing fell back to the energy dual on %d zero-flow "
                 "line-slots", degenerate)
    return out


# ---------------------------------------------------------------------------
# P1: stochastic dispatch of the community operator
# ---------------------------------------------------------------------------

@dataclass
class P1Build:
    prog: ConicProgram
    households: list[HouseholdSpec]
    ess: dict[str, EssVars]
    exchanges: dict[tuple[int, int], dict[str, ExchangeVars]]
    n_pv: int
    n_de: int
    n_slots: int
    dt: float
    tariff: TariffSchedule

    def scenario_pairs(self) -> list[tuple[int, int]]:
        return [(u, d) for u in range(self.n_pv) for d in range(self.n_de)]

    def ess_states(self, sol: Solution) -> dict[str, BatteryState]:
        out = {}
        for hh in self.households:
            vars_ = self.ess[hh.id]
            mode = np.zeros(self.n_slots)
            if vars_.mode:
                mode = np.asarray([sol.value(i) for i in vars_.mode])
            out[hh.id] = BatteryState(
                spec=hh.battery,
                soc=np.asarray([sol.value(i) for i in vars_.soc]),
                charge=np.asarray([sol.value(i) for i in vars_.charge]),
                discharge=np.asarray([sol.value(i) for i in vars_.discharge]),
                mode=mode,
            )
        return out

    def trades(self, sol: Solution, u: int, d: int) -> TradeLedger:
        return extract_trades(sol, self.exchanges[(u, d)], self.n_slots)

    def bus_injections_pu(
        self, sol: Solution, net: NetworkModel, u: int, d: int
    ) -> tuple[dict[tuple[int, int], float], dict[tuple[int, int], float]]:
        """Aggregate household net injections (kW) onto buses, in per-unit."""
        h_p: dict[tuple[int, int], float] = {}
        h_q: dict[tuple[int, int], float] = {}
        owner = {
            hh: bus for bus, members in net.bus_households.items() for hh in members
        }
        for hh in self.households:
            ex = self.exchanges[(u, d)][hh.id]
            bus = owner[hh.id]
            for t in range(self.n_slots):
                h_p[(bus, t)] = h_p.get((bus, t), 0.0) + net.kw_to_pu(
                    sol.value(ex.p_net[t])
                )
                h_q[(bus, t)] = h_q.get((bus, t), 0.0) + net.kw_to_pu(
                    sol.value(ex.q_net[t])
                )
        return h_p, h_q

    def scenario_grid_cost(self, sol: Solution, u: int, d: int) -> float:
        """Realized grid cost of one scenario: sum (buy*b0 - sell*s0)*dt."""
        total = 0.0
        for ex in self.exchanges[(u, d)].values():
            for t in range(self.n_slots):
                total += (
                    float(self.tariff.buy[t]) * sol.value(ex.grid_buy[t])
                    - float(self.tariff.sell[t]) * sol.value(ex.grid_sell[t])
                ) * self.dt
        return total


def build_p1(
    households: Sequence[HouseholdSpec],
    pv_sets: Mapping[str, QuantileScenarioSet],
    de_sets: Mapping[str, QuantileScenarioSet],
    tariff: TariffSchedule,
    prices: PriceBook | None = None,
) -> P1Build:
    """Stochastic dispatch: scenario-indexed trades, shared storage.

    ``prices=None`` prices every bilateral trade at zero (first iteration);
    otherwise the directional bilateral price from the book applies.
    """
    households = sorted(households, key=lambda h: h.id)
    validate_partners(households)
    _, n_slots = check_same_grid(
        [pv_sets[h.id] for h in households] + [de_sets[h.id] for h in households]
    )
    if tariff.n_slots != n_slots:
        raise DimensionMismatch(
            f"tariff covers {tariff.n_slots} slots, scenarios {n_slots}"
        )
    dts = {h.battery.dt for h in households}
    if len(dts) != 1:
        raise ConfigError("households disagree on slot duration")
    dt = dts.pop()
    n_pv = len(pv_sets[households[0].id].quantiles)
    n_de = len(de_sets[households[0].id].quantiles)
    weight = 1.0 / (n_pv * n_de)

    prog = ConicProgram()
    ess: dict[str, EssVars] = {}
    exchanges: dict[tuple[int, int], dict[str, ExchangeVars]] = {}
    for u in range(n_pv):
        for d in range(n_de):
            exchanges[(u, d)] = {}
            for hh in households:
                shared = ess.get(hh.id)
                shared, ex = build_household_block(
                    prog,
                    hh,
                    pv_sets[hh.id].trajectory(u),
                    de_sets[hh.id].trajectory(d),
                    scenario_tag=(u, d),
                    ess=shared,
                )
                ess[hh.id] = shared
                exchanges[(u, d)][hh.id] = ex
                for t in range(n_slots):
                    prog.add_cost(ex.grid_buy[t], float(tariff.buy[t]) * weight * dt)
                    prog.add_cost(ex.grid_sell[t], -float(tariff.sell[t]) * weight * dt)
                    if prices is not None:
                        for m in sorted(hh.partners):
                            sell_p = prices.seller_price(hh.id, m, t, u, d)
                            buy_p = prices.buyer_price(hh.id, m, t, u, d)
                            prog.add_cost(ex.sell[(m, t)], -sell_p * weight * dt)
                            prog.add_cost(ex.buy[(m, t)], buy_p * weight * dt)
            enforce_reciprocity(prog, exchanges[(u, d)], households, n_slots)
    return P1Build(
        prog, list(households), ess, exchanges, n_pv, n_de, n_slots, dt, tariff
    )


# ---------------------------------------------------------------------------
# P2: scenario AC-OPF of the network operator
# ---------------------------------------------------------------------------

@dataclass
class P2Build:
    prog: ConicProgram
    net: NetworkModel
    netvars: dict[tuple[int, int], NetVars]
    slots: list[int]
    dt: float
    tariff: TariffSchedule
    params: MarketParams

    def flows(self, sol: Solution, u: int, d: int) -> FlowState:
        return extract_flows(sol, self.netvars[(u, d)])

    def slack_values(self, sol: Solution, u: int, d: int):
        # interior-point noise can leave slacks at -1e-12; report them as 0
        nv = self.netvars[(u, d)]
        xi = {k: max(0.0, sol.value(i)) for k, i in nv.xi.items()}
        phi = {k: max(0.0, sol.value(i)) for k, i in nv.phi.items()}
        return xi, phi

    def scenario_energy_cost(self, sol: Solution, u: int, d: int) -> float:
        nv = self.netvars[(u, d)]
        return sum(
            float(self.tariff.buy[t]) * sol.value(nv.g0p[t]) * self.dt
            for t in self.slots
        )


def build_p2(
    net: NetworkModel,
    injections: Mapping[tuple[int, int], tuple[Mapping, Mapping]],
    tariff: TariffSchedule,
    params: MarketParams,
    dt: float = 1.0,
) -> P2Build:
    """Soft-limited DistFlow SOCP over the given scenario blocks.

    ``injections[(u, d)]`` supplies per-bus constants ``(h_p, h_q)`` keyed by
    (bus, slot), in per-unit.  Scenario blocks share no variables, so the
    joint program decomposes exactly.
    """
    slots_set = set()
    for h_p, _ in injections.values():
        slots_set.update(t for _, t in h_p)
    slots = sorted(slots_set) if slots_set else list(range(tariff.n_slots))
    prog = ConicProgram()
    netvars = {}
    for (u, d), (h_p, h_q) in sorted(injections.items()):
        netvars[(u, d)] = add_network_block(
            prog,
            net,
            slots,
            {key: ([], val) for key, val in h_p.items()},
            {key: ([], val) for key, val in h_q.items()},
            g0_cost={t: float(tariff.buy[t]) * dt for t in slots},
            soft_limits=True,
            varpi=params.varpi,
            tau=params.tau,
            slack_cost_dt=dt,
            tag_extra=(u, d),
            name_suffix=f"|{u},{d}",
        )
    return P2Build(prog, net, netvars, slots, dt, tariff, params)


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------

@dataclass
class SlackReport:
    flow_slack: dict[tuple[int, int, int, int], float] = field(default_factory=dict)
    volt_slack: dict[tuple[int, int, int, int], float] = field(default_factory=dict)
    congested_slots: set[int] = field(default_factory=set)

    @property
    def total(self) -> float:
        return sum(self.flow_slack.values()) + sum(self.volt_slack.values())


@dataclass
class DayAheadResult:
    ess_schedule: dict[str, BatteryState]
    trades: dict[tuple[int, int], TradeLedger]
    flows: dict[tuple[int, int], FlowState]
    duals: dict
    prices: PriceBook
    slack: SlackReport
    expected_cost: float
    dso_expected_cost: float
    scenario_energy_cost: dict[tuple[int, int], float]
    iterations: int
    converged: bool
    trace: list[dict]
    n_slots: int
    dt: float

    @property
    def total_expected_cost(self) -> float:
        """Community dispatch cost plus expected network cost; comparable to
        the perfect-information benchmark objective."""
        return self.expected_cost + self.dso_expected_cost


def _p2_threads() -> int:
    raw = os.environ.get("DERMARKET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class _ScenarioOutcome:
    """Merged per-slot network clearings of one scenario."""

    flows: FlowState
    duals: dict
    xi: dict
    phi: dict
    objective: float
    energy_cost: float


def _clear_scenario(
    net: NetworkModel,
    injections: tuple[Mapping, Mapping],
    tariff: TariffSchedule,
    params: MarketParams,
    dt: float,
    ud: tuple[int, int],
    dump_lp_dir: str | None = None,
    iteration: int = 0,
) -> _ScenarioOutcome:
    """Solve the scenario's network clearing slot by slot.

    Slots share no variables, so solving them separately is exact and keeps
    each cone program small and well conditioned.
    """
    h_p, h_q = injections
    slots = sorted({t for _, t in h_p})
    flows = FlowState(v={}, f_p={}, f_q={}, l={}, g0p={}, g0q={})
    duals: dict = {}
    xi: dict = {}
    phi: dict = {}
    objective = energy = 0.0
    for t in slots:
        build = build_p2(
            net,
            {ud: ({k: v for k, v in h_p.items() if k[1] == t},
                  {k: v for k, v in h_q.items() if k[1] == t})},
            tariff,
            params,
            dt,
        )
        if dump_lp_dir:
            u, d = ud
            write_lp(
                build.prog,
                os.path.join(dump_lp_dir, f"p2_k{iteration}_u{u}d{d}_t{t}.lp"),
            )
        sol = solve_continuous(build.prog)
        part = build.flows(sol, *ud)
        flows.v.update(part.v)
        flows.f_p.update(part.f_p)
        flows.f_q.update(part.f_q)
        flows.l.update(part.l)
        flows.g0p.update(part.g0p)
        flows.g0q.update(part.g0q)
        duals.update(sol.duals)
        xi_t, phi_t = build.slack_values(sol, *ud)
        xi.update(xi_t)
        phi.update(phi_t)
        objective += sol.objective_value
        energy += build.scenario_energy_cost(sol, *ud)
    return _ScenarioOutcome(flows, duals, xi, phi, objective, energy)


def run_day_ahead(
    net: NetworkModel,
    households: Sequence[HouseholdSpec],
    pv_sets: Mapping[str, QuantileScenarioSet],
    de_sets: Mapping[str, QuantileScenarioSet],
    tariff: TariffSchedule,
    params: MarketParams = MarketParams(),
    dump_lp_dir: str | None = None,
) -> DayAheadResult:
    """Iterate dispatch and network clearing until prices settle.

    Stops immediately when no scenario needs any slack (no congestion: the
    first-pass dispatch is already the cheapest network-feasible plan, and
    the pair adders stay untouched); otherwise iterates until both the total
    slack and the dispatch cost move less than their tolerances, or ``k_max``
    is hit (result flagged unconverged).
    """
    households = sorted(households, key=lambda h: h.id)
    book = price_book_for(tariff)
    prices: PriceBook | None = None
    prev_cost = prev_slack = math.nan
    trace: list[dict] = []
    converged = False
    result_parts: dict = {}

    for k in range(1, params.k_max + 1):
        p1 = build_p1(households, pv_sets, de_sets, tariff, prices)
        if dump_lp_dir:
            write_lp(p1.prog, os.path.join(dump_lp_dir, f"p1_k{k}.lp"))
        sol1 = solve_mixed(p1.prog)

        pairs = p1.scenario_pairs()
        injections = {
            (u, d): p1.bus_injections_pu(sol1, net, u, d) for (u, d) in pairs
        }

        def clear(ud):
            return _clear_scenario(
                net, injections[ud], tariff, params, p1.dt, ud,
                dump_lp_dir=dump_lp_dir, iteration=k,
            )

        threads = _p2_threads()
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = dict(zip(pairs, pool.map(clear, pairs)))
        else:
            outcomes = {ud: clear(ud) for ud in pairs}

        slack = SlackReport()
        duals: dict = {}
        flows: dict[tuple[int, int], FlowState] = {}
        scenario_cost: dict[tuple[int, int], float] = {}
        dso_cost = 0.0
        nodal: dict[tuple[int, int, int, int], float] = {}
        slots = list(range(p1.n_slots))
        for (u, d), outcome in outcomes.items():
            duals.update(outcome.duals)
            flows[(u, d)] = outcome.flows
            for (i, t), val in outcome.xi.items():
                slack.flow_slack[(i, t, u, d)] = val
                if val > SLACK_ACTIVE_TOL:
                    slack.congested_slots.add(t)
            for (i, t), val in outcome.phi.items():
                slack.volt_slack[(i, t, u, d)] = val
                if val > SLACK_ACTIVE_TOL:
                    slack.congested_slots.add(t)
            scenario_cost[(u, d)] = (
                p1.scenario_grid_cost(sol1, u, d) + outcome.energy_cost
            )
            dso_cost += outcome.objective / len(pairs)
            for (i, t), lam in compute_nodal_prices(
                net, outcome.flows, outcome.duals, slots, tag_extra=(u, d)
            ).items():
                nodal[(i, t, u, d)] = lam

        p1_cost = sol1.objective_value
        slack_total = slack.total
        trace.append(
            {
                "iteration": k,
                "dispatch_cost": p1_cost,
                "dso_cost": dso_cost,
                "slack_total": slack_total,
            }
        )
        result_parts = {
            "p1": p1,
            "sol1": sol1,
            "flows": flows,
            "duals": duals,
            "slack": slack,
            "scenario_cost": scenario_cost,
            "dso_cost": dso_cost,
            "p1_cost": p1_cost,
            "iterations": k,
        }
        book.nodal = nodal

        if slack_total <= params.eps_slack:
            converged = True
            break
        if (
            k > 1
            and abs(slack_total - prev_slack) < params.eps_slack
            and abs(p1_cost - prev_cost) < params.eps_cost
        ):
            converged = True
            break
        prev_cost, prev_slack = p1_cost, slack_total

        # accumulate the pair adders and re-price the next dispatch
        owner = {
            hh: bus for bus, members in net.bus_households.items() for hh in members
        }
        for hh in households:
            for m in sorted(hh.partners):
                if m <= hh.id:
                    continue
                key_n, key_m = owner[hh.id], owner[m]
                for (u, d) in pairs:
                    for t in range(p1.n_slots):
                        pair_key = (*PriceBook.pair(hh.id, m), t, u, d)
                        book.elp[pair_key] = update_bilateral_price(
                            book.elp.get(pair_key, 0.0),
                            params.rho,
                            nodal[(key_n, t, u, d)],
                            nodal[(key_m, t, u, d)],
                        )
        prices = book
    else:
        log.warning("day-ahead loop hit k_max=%d without converging", params.k_max)

    p1 = result_parts["p1"]
    sol1 = result_parts["sol1"]
    return DayAheadResult(
        ess_schedule=p1.ess_states(sol1),
        trades={ud: p1.trades(sol1, *ud) for ud in p1.scenario_pairs()},
        flows=result_parts["flows"],
        duals=result_parts["duals"],
        prices=book,
        slack=result_parts["slack"],
        expected_cost=result_parts["p1_cost"],
        dso_expected_cost=result_parts["dso_cost"],
        scenario_energy_cost=result_parts["scenario_cost"],
        iterations=result_parts["iterations"],
        converged=converged,
        trace=trace,
        n_slots=p1.n_slots,
        dt=p1.dt,
    )
