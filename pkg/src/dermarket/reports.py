"""Report writers: JSON/CSV artifacts of each pipeline stage.

Outputs are deterministic for identical inputs (keys sorted, no timestamps),
and every file round-trips through the loader of the module that owns its
schema where one exists.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Mapping, Sequence

from .baselines import Comparison
from .community import TradeLedger
from .dayahead import DayAheadResult
from .realtime import RealTimeResult
from .settlement import SettlementRecord, write_community_json, write_settlement_csv

PROFIT_NOTE = "profit = -cost"


def _write_json(path: str, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _ledger_rows(trades: TradeLedger) -> dict:
    return {
        "grid_sell": {f"{n}@{t}": round(v, 9) for (n, t), v in sorted(trades.grid_sell.items())},
        "grid_buy": {f"{n}@{t}": round(v, 9) for (n, t), v in sorted(trades.grid_buy.items())},
        "sell": {f"{n}->{m}@{t}": round(v, 9) for (n, m, t), v in sorted(trades.sell.items())},
        "buy": {f"{n}<-{m}@{t}": round(v, 9) for (n, m, t), v in sorted(trades.buy.items())},
    }


def write_day_ahead_reports(
    result: DayAheadResult, out_dir: str, no_flows: bool = False
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    manifest = []

    schedule = {
        hh: {
            "soc": [round(v, 9) for v in st.soc],
            "charge": [round(v, 9) for v in st.charge],
            "discharge": [round(v, 9) for v in st.discharge],
            "mode": [int(round(v)) for v in st.mode],
        }
        for hh, st in sorted(result.ess_schedule.items())
    }
    path = os.path.join(out_dir, "schedule.json")
    _write_json(
        path,
        {
            "note": PROFIT_NOTE,
            "expected_cost": result.expected_cost,
            "dso_expected_cost": result.dso_expected_cost,
            "total_expected_cost": result.total_expected_cost,
            "iterations": result.iterations,
            "converged": result.converged,
            "trace": result.trace,
            "n_slots": result.n_slots,
            "dt": result.dt,
            "scenario_energy_cost": {
                f"{u},{d}": v for (u, d), v in sorted(result.scenario_energy_cost.items())
            },
            "ess": schedule,
            "trades": {
                f"{u},{d}": _ledger_rows(ledger)
                for (u, d), ledger in sorted(result.trades.items())
            },
        },
    )
    manifest.append(path)

    path = os.path.join(out_dir, "prices.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "key", "slot", "pv_scenario", "demand_scenario", "value"])
        for t, v in enumerate(result.prices.gmp):
            writer.writerow(["gmp", "", t, "", "", f"{v:.9g}"])
        for (i, t, u, d), v in sorted(result.prices.nodal.items()):
            writer.writerow(["nodal", f"bus{i}", t, u, d, f"{v:.9g}"])
        for (n, m, t, u, d), v in sorted(result.prices.elp.items()):
            writer.writerow(["elp", f"{n}|{m}", t, u, d, f"{v:.9g}"])
            writer.writerow(
                ["iglp_seller", f"{n}|{m}", t, u, d,
                 f"{v - result.prices.gmp[t]:.9g}"]
            )
            writer.writerow(
                ["iglp_buyer", f"{n}|{m}", t, u, d,
                 f"{v + result.prices.gmp[t]:.9g}"]
            )
    manifest.append(path)

    path = os.path.join(out_dir, "slack.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "element", "slot", "pv_scenario", "demand_scenario", "value"])
        for (i, t, u, d), v in sorted(result.slack.flow_slack.items()):
            writer.writerow(["flow", f"line{i}", t, u, d, f"{v:.9g}"])
        for (i, t, u, d), v in sorted(result.slack.volt_slack.items()):
            writer.writerow(["voltage", f"bus{i}", t, u, d, f"{v:.9g}"])
        for t in sorted(result.slack.congested_slots):
            writer.writerow(["congested_slot", "", t, "", "", "1"])
    manifest.append(path)

    if not no_flows:
        path = os.path.join(out_dir, "flows.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["pv_scenario", "demand_scenario", "element", "slot",
                 "v_sq", "f_p", "f_q", "l_sq"]
            )
            for (u, d), flows in sorted(result.flows.items()):
                for (i, t), v in sorted(flows.v.items()):
                    writer.writerow(
                        [u, d, f"bus{i}", t, f"{v:.9g}",
                         f"{flows.f_p.get((i, t), 0.0):.9g}",
                         f"{flows.f_q.get((i, t), 0.0):.9g}",
                         f"{flows.l.get((i, t), 0.0):.9g}"]
                    )
        manifest.append(path)
    return manifest


def write_real_time_reports(
    results: Sequence[RealTimeResult], out_dir: str, no_flows: bool = False
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    payload = []
    for res in results:
        payload.append(
            {
                "slot": res.slot,
                "cost": res.cost,
                "energy_cost": res.energy_cost,
                "flow_violation": res.flow_violation,
                "volt_violation": res.volt_violation,
                "binding": [list(map(str, tag)) for tag in res.binding],
                "trades": _ledger_rows(res.trades),
                "adjustments": {
                    hh: {
                        "e_bc": adj.e_bc,
                        "e_bd": adj.e_bd,
                        "soc_rt": adj.soc_rt,
                        "soc_dev": adj.soc_dev,
                    }
                    for hh, adj in sorted(res.adjustments.items())
                },
                "prices": {
                    "gmp": float(res.prices.gmp[res.slot]),
                    "elp": {
                        f"{n}|{m}": v
                        for (n, m, t, u, d), v in sorted(res.prices.elp.items())
                    },
                },
            }
        )
    path = os.path.join(out_dir, "realtime.json")
    _write_json(path, {"note": PROFIT_NOTE, "slots": payload})
    manifest.append(path)

    if not no_flows and results:
        path = os.path.join(out_dir, "realtime_flows.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["element", "slot", "v_sq", "f_p", "f_q", "l_sq"])
            for res in results:
                for (i, t), v in sorted(res.flows.v.items()):
                    writer.writerow(
                        [f"bus{i}", t, f"{v:.9g}",
                         f"{res.flows.f_p.get((i, t), 0.0):.9g}",
                         f"{res.flows.f_q.get((i, t), 0.0):.9g}",
                         f"{res.flows.l.get((i, t), 0.0):.9g}"]
                    )
        manifest.append(path)
    return manifest


def write_settlement_reports(
    record: SettlementRecord,
    results: Sequence[RealTimeResult],
    partners_of: Mapping[str, Sequence[str]],
    out_dir: str,
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    settlement_csv = os.path.join(out_dir, "settlement.csv")
    write_settlement_csv(record, results, partners_of, settlement_csv)
    community_json = os.path.join(out_dir, "community.json")
    write_community_json(record, community_json)
    return [settlement_csv, community_json]


def write_comparison_reports(comparison: Comparison, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    rows = comparison.as_rows()
    path_csv = os.path.join(out_dir, "comparison.csv")
    with open(path_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    path_json = os.path.join(out_dir, "comparison.json")
    _write_json(
        path_json,
        {
            "note": PROFIT_NOTE,
            "methods": rows,
            "gap_reduction_vs_point_forecast": comparison.reduction,
        },
    )
    return [path_csv, path_json]
