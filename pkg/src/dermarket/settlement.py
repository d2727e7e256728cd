"""End-of-day payments from recorded exchanges.

A household's slot cost is grid purchases minus feed-in credits minus the
priced value of its net bilateral trades; negative values are earnings.
Because bilateral prices are directional (buyer pays adder-plus-mid, seller
is credited adder-minus-mid), a reciprocal trade does not net to zero inside
the community: each traded unit leaves a spread of twice the middle price,
reported as its own line item rather than reconciled away.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .community import TradeLedger
from .dayahead import TariffSchedule
from .errors import MissingPrice
from .realtime import RealTimeResult

PRICE_TOL = 1e-12


@dataclass
class SettlementRecord:
    household_costs: dict[tuple[str, int], float] = field(default_factory=dict)
    community_cost: dict[int, float] = field(default_factory=dict)
    household_totals: dict[str, float] = field(default_factory=dict)
    community_total: float = 0.0
    spread: dict[int, float] = field(default_factory=dict)  # 2*mid*volume per slot
    spread_total: float = 0.0


def household_cost(
    tariff: TariffSchedule,
    trades: TradeLedger,
    prices: Mapping[tuple[str, str, int], float],
    n: str,
    t: int,
    partners: Sequence[str],
    dt: float = 1.0,
) -> float:
    """buy*b_grid - sell*s_grid - sum over partners of price * net trade."""
    cost = (
        float(tariff.buy[t]) * trades.grid_buy.get((n, t), 0.0)
        - float(tariff.sell[t]) * trades.grid_sell.get((n, t), 0.0)
    ) * dt
    for m in partners:
        net = trades.net(n, m, t)
        if abs(net) <= PRICE_TOL:
            continue
        if (n, m, t) not in prices:
            raise MissingPrice(f"no recorded price for trade {(n, m, t)}")
        cost -= prices[(n, m, t)] * net * dt
    return cost


def community_cost(records: Mapping[str, float]) -> float:
    """Exact sum of the household costs at one slot."""
    return sum(records.values())


def settle(
    results: Sequence[RealTimeResult],
    tariff: TariffSchedule,
    partners_of: Mapping[str, Sequence[str]],
    dt: float = 1.0,
) -> SettlementRecord:
    """Price every recorded slot with its realized directional prices."""
    record = SettlementRecord()
    for res in results:
        t = res.slot
        prices: dict[tuple[str, str, int], float] = {}
        households = sorted(partners_of)
        for n in households:
            for m in partners_of[n]:
                net = res.trades.net(n, m, t)
                direction = "seller" if net >= 0 else "buyer"
                u = 0
                elp = res.prices.elp_at(n, m, t, u, u)
                gmp = float(res.prices.gmp[t])
                prices[(n, m, t)] = elp - gmp if direction == "seller" else elp + gmp
        slot_costs = {}
        for n in households:
            c = household_cost(
                tariff, res.trades, prices, n, t, sorted(partners_of[n]), dt
            )
            slot_costs[n] = c
            record.household_costs[(n, t)] = c
            record.household_totals[n] = record.household_totals.get(n, 0.0) + c
        record.community_cost[t] = community_cost(slot_costs)
        record.community_total += record.community_cost[t]
        volume = sum(
            max(res.trades.net(n, m, t), 0.0)
            for n in households
            for m in partners_of[n]
        )
        record.spread[t] = 2.0 * float(res.prices.gmp[t]) * volume * dt
        record.spread_total += record.spread[t]
    return record


def write_settlement_csv(
    record: SettlementRecord,
    results: Sequence[RealTimeResult],
    partners_of: Mapping[str, Sequence[str]],
    path: str,
) -> None:
    by_slot = {res.slot: res for res in results}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["household", "slot", "grid_buy", "grid_sell", "p2p_net", "price_applied", "cost"]
        )
        for (n, t) in sorted(record.household_costs):
            res = by_slot[t]
            p2p_net = sum(res.trades.net(n, m, t) for m in partners_of[n])
            price = ""
            for m in sorted(partners_of[n]):
                net = res.trades.net(n, m, t)
                if abs(net) > PRICE_TOL:
                    elp = res.prices.elp_at(n, m, t, 0, 0)
                    gmp = float(res.prices.gmp[t])
                    price = f"{elp - gmp if net >= 0 else elp + gmp:.6g}"
                    break
            writer.writerow(
                [
                    n,
                    t,
                    f"{res.trades.grid_buy.get((n, t), 0.0):.6g}",
                    f"{res.trades.grid_sell.get((n, t), 0.0):.6g}",
                    f"{p2p_net:.6g}",
                    price,
                    f"{record.household_costs[(n, t)]:.6g}",
                ]
            )


def write_community_json(record: SettlementRecord, path: str) -> None:
    payload = {
        "note": "profit = -cost; spread is the buyer/seller price wedge",
        "community_total": record.community_total,
        "per_slot": {str(t): c for t, c in sorted(record.community_cost.items())},
        "household_totals": dict(sorted(record.household_totals.items())),
        "spread": {str(t): s for t, s in sorted(record.spread.items())},
        "spread_total": record.spread_total,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
