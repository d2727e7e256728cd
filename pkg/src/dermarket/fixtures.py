"""Bundled synthetic study cases, generated deterministically from a seed.

Two cases ship with the package:

* ``standard``: a 15-bus feeder with 50 households, ample line capacity and
  quantile scenario spreads wide enough that hedged and median-based
  storage plans diverge;
* ``congestion``: the same feeder with the capacity of the line into bus 2
  cut down and PV-heavy households concentrated behind it, sized so a
  median-forecast schedule overloads that line during the afternoon PV
  surge while a hedged schedule keeps enough battery headroom to absorb it.

Regenerating with the same seed reproduces the shipped files byte for byte.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .community import BatterySpec, HouseholdSpec, save_households, load_households
from .dayahead import TariffSchedule, load_tariff_csv, save_tariff_csv
from .network import NetworkModel, build_network, load_network, save_network
from .scenarios import (
    QuantileScenarioSet,
    Realization,
    equal_quantile_levels,
    load_realizations_csv,
    load_scenarios_csv,
    write_realizations_csv,
    write_scenarios_csv,
)

DEFAULT_SEED = 20240715
N_SLOTS = 24

# battery ratings shared by every synthetic household (kWh / kW)
BATTERY = dict(eta=0.95, e_min=0.64, e_max=13.5, p_max=3.3,
               e_initial=0.64, e_final=0.64, dt=1.0)

# weekday tariff levels (currency/kWh); selling stays below every buy price
TOU_NIGHT, TOU_MORNING, TOU_DAY, TOU_EVENING = 0.16, 0.18, 0.15, 0.24
FIT_RATE = 0.05

# quantile spread factors: value(q) = base * (a + b*q)
PV_SPREAD = (0.35, 1.30)
DEMAND_SPREAD = (0.75, 0.50)

# realization levels for the shipped comparison runs
REALIZED_PV_LEVEL = 0.80
REALIZED_DEMAND_LEVEL = 0.50

# Congestion case.  Engineered so the median-forecast storage plan is in
# discharge mode through the afternoon (its forecast shows a small demand
# deficit at slots 14..17, served from storage), while the hedged plan keeps
# charging there (high-PV scenarios leave storable surplus in the window and
# evening demand still values it).  On the realized high-PV afternoon the
# median plan's mode gate blocks absorption and the line into bus 2
# overloads at exactly those slots; the hedged plan absorbs within its
# committed charge mode.  Grid-to-storage arbitrage is priced off
# (day buy > eta^2 * evening buy) so charging tracks scenario surpluses.
CONGESTION_S_MAX = 0.0085
CONGESTION_PV_AMP = 5.5
CONGESTION_PV_SIGMA = 4.0
CONGESTION_HOUSEHOLDS = 6
CONGESTION_BATTERY = dict(eta=0.95, e_min=0.64, e_max=40.0, p_max=7.0,
                          e_initial=0.64, e_final=0.64, dt=1.0)
CONGESTION_BUY_DAY = 0.155
CONGESTION_BUY_EVENING = 0.160
CONGESTION_FIT = 0.02
CONGESTION_DAY_BASE = 0.9     # kW flat demand while the sun is up
CONGESTION_HUMP = 1.05        # afternoon demand tracks own median PV
CONGESTION_EVENING_AMP = 4.5
CONGESTION_REALIZED_PV = 0.90
CONGESTION_REALIZED_DEMAND = 0.20   # daytime; evenings run hot instead
CONGESTION_REALIZED_EVENING = 1.05  # direct factor on slots >= 18
CONGESTION_JITTER = 0.015


@dataclass
class Case:
    net: NetworkModel
    households: list[HouseholdSpec]
    pv_sets: dict[str, QuantileScenarioSet]
    de_sets: dict[str, QuantileScenarioSet]
    tariff: TariffSchedule
    realizations: dict[str, Realization]


def _bell(t: float, mu: float, sigma: float) -> float:
    return math.exp(-0.5 * ((t - mu) / sigma) ** 2)


def weekday_tariff(n_slots: int = N_SLOTS) -> TariffSchedule:
    buy = []
    for t in range(n_slots):
        if t <= 6 or t == 23:
            buy.append(TOU_NIGHT)
        elif t <= 9:
            buy.append(TOU_MORNING)
        elif t <= 16:
            buy.append(TOU_DAY)
        else:
            buy.append(TOU_EVENING)
    return TariffSchedule(buy=np.asarray(buy), sell=np.full(n_slots, FIT_RATE))


def weekend_tariff(n_slots: int = N_SLOTS) -> TariffSchedule:
    week = weekday_tariff(n_slots)
    return TariffSchedule(buy=0.85 * week.buy, sell=week.sell)


def feeder_15bus(
    s_max_line2: float = 1.0,
    bus_households: Mapping[int, list[str]] | None = None,
) -> NetworkModel:
    """Radial feeder: two laterals off bus 1 and a second feeder off bus 8."""
    parents = {1: 0, 2: 1, 3: 2, 4: 3, 5: 1, 6: 5, 7: 6,
               8: 0, 9: 8, 10: 9, 11: 10, 12: 8, 13: 12, 14: 13}
    rows = [{"id": 0, "parent": None, "line": None,
             "households": (bus_households or {}).get(0, [])}]
    for i in range(1, 15):
        s_max = s_max_line2 if i == 2 else 1.0
        rows.append(
            {
                "id": i,
                "parent": parents[i],
                "line": {"r": 0.01, "x": 0.01, "s_max": s_max},
                "households": (bus_households or {}).get(i, []),
            }
        )
    return build_network(
        rows, {"g_p_min": -5.0, "g_p_max": 5.0, "g_q_min": -5.0, "g_q_max": 5.0}
    )


def _pv_base(amp: float) -> np.ndarray:
    vals = [amp * max(0.0, _bell(t, 13.0, 3.2) - 0.05) / 0.95 for t in range(N_SLOTS)]
    return np.asarray(vals)


def _demand_base(scale: float) -> np.ndarray:
    vals = [
        scale * (0.30 + 0.5 * _bell(t, 8.0, 2.2) + 1.0 * _bell(t, 19.5, 2.6))
        for t in range(N_SLOTS)
    ]
    return np.asarray(vals)


def _scenario_sets(
    bases: Mapping[str, np.ndarray], kind: str, spread: tuple[float, float], n_quantiles: int
) -> dict[str, QuantileScenarioSet]:
    levels = equal_quantile_levels(n_quantiles)
    a, b = spread
    out = {}
    for hh, base in sorted(bases.items()):
        traj = np.vstack([(a + b * q) * base for q in levels])
        out[hh] = QuantileScenarioSet(
            kind=kind, household=hh, quantiles=levels, trajectories=traj
        )
    return out


def _realizations(
    pv_bases: Mapping[str, np.ndarray],
    de_bases: Mapping[str, np.ndarray],
    rng: np.random.Generator,
    pv_level: float,
    de_level: float,
) -> dict[str, Realization]:
    out = {}
    for hh in sorted(pv_bases):
        pv_f = PV_SPREAD[0] + PV_SPREAD[1] * pv_level
        de_f = DEMAND_SPREAD[0] + DEMAND_SPREAD[1] * de_level
        pv = pv_bases[hh] * pv_f * (1.0 + rng.uniform(-0.03, 0.03, N_SLOTS))
        de = de_bases[hh] * de_f * (1.0 + rng.uniform(-0.03, 0.03, N_SLOTS))
        out[hh] = Realization(household=hh, pv=np.maximum(pv, 0.0), demand=np.maximum(de, 0.0))
    return out


def standard_case(n_quantiles: int = 3, seed: int = DEFAULT_SEED) -> Case:
    """50 households over 14 load buses, ample capacity, paired partners."""
    rng = np.random.default_rng(seed)
    ids = [f"h{k:02d}" for k in range(50)]
    buses = {hh: 1 + (k % 14) for k, hh in enumerate(ids)}
    partners = {}
    for k in range(0, 50, 2):
        partners[ids[k]] = {ids[k + 1]}
        partners[ids[k + 1]] = {ids[k]}
    sizes = {hh: rng.uniform(0.75, 1.35) for hh in ids}
    panel = {hh: rng.uniform(2.2, 3.4) for hh in ids}
    pv_bases = {hh: _pv_base(panel[hh]) for hh in ids}
    de_bases = {hh: _demand_base(sizes[hh]) for hh in ids}
    households = [
        HouseholdSpec(
            id=hh, bus=buses[hh], battery=BatterySpec(**BATTERY),
            partners=frozenset(partners[hh]),
        )
        for hh in ids
    ]
    by_bus: dict[int, list[str]] = {}
    for hh, bus in buses.items():
        by_bus.setdefault(bus, []).append(hh)
    net = feeder_15bus(bus_households=by_bus)
    return Case(
        net=net,
        households=households,
        pv_sets=_scenario_sets(pv_bases, "pv", PV_SPREAD, n_quantiles),
        de_sets=_scenario_sets(de_bases, "demand", DEMAND_SPREAD, n_quantiles),
        tariff=weekday_tariff(),
        realizations=_realizations(
            pv_bases, de_bases, rng, REALIZED_PV_LEVEL, REALIZED_DEMAND_LEVEL
        ),
    )


def congestion_tariff(n_slots: int = N_SLOTS) -> TariffSchedule:
    buy = np.full(n_slots, CONGESTION_BUY_DAY)
    # strictly increasing evening prices pin each household's discharge to
    # the late slots and its residual purchases to the early ones
    for k, t in enumerate(range(18, n_slots)):
        buy[t] = CONGESTION_BUY_EVENING + 0.002 * k
    return TariffSchedule(buy=buy, sell=np.full(n_slots, CONGESTION_FIT))


def _congestion_pv_base(amp: float) -> np.ndarray:
    return np.asarray(
        [amp * _bell(t, 13.0, CONGESTION_PV_SIGMA) if 7 <= t <= 17 else 0.0
         for t in range(N_SLOTS)]
    )


def _congestion_demand_base(pv_base: np.ndarray) -> np.ndarray:
    de = np.full(N_SLOTS, 0.3)
    for t in range(7, 14):
        de[t] = CONGESTION_DAY_BASE
    for t in range(14, 18):
        de[t] = CONGESTION_HUMP * pv_base[t] + 0.15
    for t in range(18, N_SLOTS):
        de[t] = 0.3 + CONGESTION_EVENING_AMP * _bell(t, 20.5, 2.2)
    return de


def congestion_case(n_quantiles: int = 3, seed: int = DEFAULT_SEED) -> Case:
    """PV-heavy households behind a weak line into bus 2."""
    rng = np.random.default_rng(seed + 1)
    ids = [f"c{k}" for k in range(CONGESTION_HOUSEHOLDS)]
    subtree = (2, 3, 4)
    buses = {hh: subtree[k % len(subtree)] for k, hh in enumerate(ids)}
    partners = {}
    for k in range(0, CONGESTION_HOUSEHOLDS, 2):
        partners[ids[k]] = {ids[k + 1]}
        partners[ids[k + 1]] = {ids[k]}
    pv_bases = {
        hh: _congestion_pv_base(CONGESTION_PV_AMP * rng.uniform(0.98, 1.02))
        for hh in ids
    }
    de_bases = {hh: _congestion_demand_base(pv_bases[hh]) for hh in ids}
    households = [
        HouseholdSpec(
            id=hh, bus=buses[hh], battery=BatterySpec(**CONGESTION_BATTERY),
            partners=frozenset(partners[hh]),
        )
        for hh in ids
    ]
    by_bus: dict[int, list[str]] = {}
    for hh, bus in buses.items():
        by_bus.setdefault(bus, []).append(hh)
    net = feeder_15bus(s_max_line2=CONGESTION_S_MAX, bus_households=by_bus)
    pv_f = PV_SPREAD[0] + PV_SPREAD[1] * CONGESTION_REALIZED_PV
    de_f = np.full(N_SLOTS, DEMAND_SPREAD[0] + DEMAND_SPREAD[1] * CONGESTION_REALIZED_DEMAND)
    de_f[18:] = CONGESTION_REALIZED_EVENING
    realizations = {}
    for hh in ids:
        jit_pv = 1.0 + rng.uniform(-CONGESTION_JITTER, CONGESTION_JITTER, N_SLOTS)
        jit_de = 1.0 + rng.uniform(-CONGESTION_JITTER, CONGESTION_JITTER, N_SLOTS)
        realizations[hh] = Realization(
            household=hh,
            pv=np.maximum(pv_bases[hh] * pv_f * jit_pv, 0.0),
            demand=np.maximum(de_bases[hh] * de_f * jit_de, 0.0),
        )
    return Case(
        net=net,
        households=households,
        pv_sets=_scenario_sets(pv_bases, "pv", PV_SPREAD, n_quantiles),
        de_sets=_scenario_sets(de_bases, "demand", DEMAND_SPREAD, n_quantiles),
        tariff=congestion_tariff(),
        realizations=realizations,
    )


def history_days(
    case: Case, n_days: int = 30, seed: int = DEFAULT_SEED
) -> dict[str, dict[str, np.ndarray]]:
    """Synthetic history whose per-slot quantiles resemble the scenario sets."""
    rng = np.random.default_rng(seed + 2)
    out = {"pv": {}, "demand": {}}
    for hh in sorted(h.id for h in case.households):
        pv_med = case.pv_sets[hh].trajectory(case.pv_sets[hh].median_index)
        de_med = case.de_sets[hh].trajectory(case.de_sets[hh].median_index)
        out["pv"][hh] = np.maximum(
            pv_med * rng.uniform(0.4, 1.6, (n_days, N_SLOTS)), 0.0
        )
        out["demand"][hh] = np.maximum(
            de_med * rng.uniform(0.7, 1.3, (n_days, N_SLOTS)), 0.0
        )
    return out


# ---------------------------------------------------------------------------
# shipped data files
# ---------------------------------------------------------------------------

def data_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "data")


def write_bundled(out_dir: str, seed: int = DEFAULT_SEED) -> list[str]:
    """Write every bundled fixture file; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = []

    def path(name: str) -> str:
        manifest.append(name)
        return os.path.join(out_dir, name)

    std = standard_case(n_quantiles=9, seed=seed)
    save_network(std.net, path("network.json"))
    save_households(std.households, path("households.json"))
    write_scenarios_csv(
        path("scenarios.csv"),
        list(std.pv_sets.values()) + list(std.de_sets.values()),
    )
    write_realizations_csv(path("realization.csv"), std.realizations.values())
    save_tariff_csv(std.tariff, path("tariff_weekday.csv"))
    save_tariff_csv(weekend_tariff(), path("tariff_weekend.csv"))

    # the congestion study is calibrated on the three-level scenario grid
    con = congestion_case(n_quantiles=3, seed=seed)
    save_network(con.net, path("congestion_network.json"))
    save_households(con.households, path("congestion_households.json"))
    write_scenarios_csv(
        path("congestion_scenarios.csv"),
        list(con.pv_sets.values()) + list(con.de_sets.values()),
    )
    write_realizations_csv(
        path("congestion_realization.csv"), con.realizations.values()
    )
    save_tariff_csv(con.tariff, path("congestion_tariff.csv"))

    hist = history_days(std)
    import csv as _csv

    with open(path("history.csv"), "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["household", "kind", "date"] + [f"t{k}" for k in range(1, N_SLOTS + 1)])
        for kind in ("pv", "demand"):
            for hh in sorted(hist[kind]):
                for day, row in enumerate(hist[kind][hh]):
                    writer.writerow(
                        [hh, kind, f"d{day:03d}"] + [f"{v:.6g}" for v in row]
                    )
    return manifest


def load_case(prefix: str = "", directory: str | None = None) -> Case:
    """Load a bundled case ("" for standard, "congestion_" for the other)."""
    directory = directory or data_dir()

    def p(name: str) -> str:
        return os.path.join(directory, f"{prefix}{name}")

    net = load_network(p("network.json"))
    households = load_households(p("households.json"))
    sets = load_scenarios_csv(p("scenarios.csv"))
    tariff = load_tariff_csv(os.path.join(directory, "tariff_weekday.csv"))
    realizations = load_realizations_csv(p("realization.csv"))
    return Case(
        net=net,
        households=households,
        pv_sets={hh: kinds["pv"] for hh, kinds in sets.items()},
        de_sets={hh: kinds["demand"] for hh, kinds in sets.items()},
        tariff=tariff,
        realizations=realizations,
    )
