"""Household, battery and P2P-trade modeling.

Emits the decision variables and linear constraints consumed by the
day-ahead / offline / real-time program builders:

* battery dynamics with a binary charge/discharge mode per slot,
* per-slot energy balance splitting net injection into grid and P2P trades,
* trade reciprocity across partner pairs.

Battery variables are "here and now": one set per household regardless of
how many scenarios reference them.  Trade and grid-exchange variables are
duplicated per scenario when a scenario tag is given.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BoundsError, ConfigError, ParseError, ValidationError
from .solver import ConicProgram

BOUNDS_TOL = 1e-9


@dataclass(frozen=True)
class BatterySpec:
    eta: float
    e_min: float
    e_max: float
    p_max: float
    e_initial: float
    e_final: float
    dt: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValidationError(f"battery efficiency must be in (0,1], got {self.eta}")
        if not 0.0 <= self.e_min <= self.e_initial <= self.e_max:
            raise ValidationError("battery requires e_min <= e_initial <= e_max >= 0")
        if not self.e_min <= self.e_final <= self.e_max:
            raise ValidationError("terminal energy outside [e_min, e_max]")
        if self.p_max < 0:
            raise ValidationError("battery power rating must be nonnegative")
        if self.dt <= 0:
            raise ValidationError("slot duration must be positive")


@dataclass(frozen=True)
class HouseholdSpec:
    id: str
    bus: int
    battery: BatterySpec
    partners: frozenset[str] = frozenset()
    reactive_ratio: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "partners", frozenset(self.partners))
        if self.id in self.partners:
            raise ValidationError(f"household {self.id} cannot partner itself")


def validate_partners(households: Sequence[HouseholdSpec]) -> None:
    """Partnership must be symmetric and reference known households."""
    by_id = {h.id: h for h in households}
    if len(by_id) != len(households):
        raise ConfigError("duplicate household ids")
    for h in households:
        for m in h.partners:
            if m not in by_id:
                raise ConfigError(f"{h.id} partners unknown household {m!r}")
            if h.id not in by_id[m].partners:
                raise ConfigError(f"partnership {h.id}->{m} is not reciprocated")


@dataclass
class BatteryState:
    """A realized battery trajectory (soc has one more entry than the rest)."""

    spec: BatterySpec
    soc: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    mode: np.ndarray

    def violations(self, tol: float = 1e-7) -> list[str]:
        out = []
        s = self.spec
        if np.any(self.soc < s.e_min - tol) or np.any(self.soc > s.e_max + tol):
            out.append("soc outside [e_min, e_max]")
        if np.any(self.charge < -tol) or np.any(self.charge - s.p_max * self.mode > tol):
            out.append("charge outside [0, psi*p_max]")
        if np.any(self.discharge < -tol) or np.any(
            self.discharge - s.p_max * (1 - self.mode) > tol
        ):
            out.append("discharge outside [0, (1-psi)*p_max]")
        if np.any(np.minimum(self.charge, self.discharge) > tol):
            out.append("simultaneous charge and discharge")
        return out


def battery_step(spec: BatterySpec, soc: float, charge: float, discharge: float) -> float:
    """Next stored energy: E + (eta*charge - discharge/eta) * dt."""
    nxt = soc + (spec.eta * charge - discharge / spec.eta) * spec.dt
    if nxt < spec.e_min - BOUNDS_TOL or nxt > spec.e_max + BOUNDS_TOL:
        raise BoundsError(
            f"stored energy {nxt:.6g} kWh leaves [{spec.e_min}, {spec.e_max}]"
        )
    return nxt


# ---------------------------------------------------------------------------
# program blocks
# ---------------------------------------------------------------------------

@dataclass
class EssVars:
    """Variable ids of one household's here-and-now storage schedule."""

    soc: list[int]        # length T+1
    charge: list[int]     # length T
    discharge: list[int]  # length T
    mode: list[int]       # psi ids; empty when p_max == 0


@dataclass
class ExchangeVars:
    """Variable ids of one household's trades for one scenario (or realized)."""

    grid_sell: dict[int, int] = field(default_factory=dict)   # t -> s_n0t
    grid_buy: dict[int, int] = field(default_factory=dict)    # t -> b_n0t
    p_net: dict[int, int] = field(default_factory=dict)       # t -> P^P
    q_net: dict[int, int] = field(default_factory=dict)       # t -> P^Q
    sell: dict[tuple[str, int], int] = field(default_factory=dict)  # (m,t) -> s_nmt
    buy: dict[tuple[str, int], int] = field(default_factory=dict)   # (m,t) -> b_nmt
    net: dict[tuple[str, int], int] = field(default_factory=dict)   # (m,t) -> T_nmt


def _suffix(tag) -> str:
    return "" if tag is None else f"|{tag[0]},{tag[1]}"


def add_battery(prog: ConicProgram, hh: HouseholdSpec, n_slots: int) -> EssVars:
    """Storage recursion (shared across scenarios), bounds and mode gates."""
    b = hh.battery
    soc = []
    for t in range(n_slots + 1):
        lb, ub = b.e_min, b.e_max
        if t == 0:
            lb = ub = b.e_initial
        elif t == n_slots:
            lb = ub = b.e_final
        soc.append(prog.add_var(f"E[{hh.id},{t}]", lb=lb, ub=ub))
    charge, discharge, mode = [], [], []
    for t in range(n_slots):
        bc = prog.add_var(f"bc[{hh.id},{t}]", lb=0.0, ub=b.p_max)
        bd = prog.add_var(f"bd[{hh.id},{t}]", lb=0.0, ub=b.p_max)
        charge.append(bc)
        discharge.append(bd)
        prog.add_eq(
            [(soc[t + 1], 1.0), (soc[t], -1.0),
             (bc, -b.eta * b.dt), (bd, b.dt / b.eta)],
            0.0,
        )
        if b.p_max > 0:
            psi = prog.add_var(f"psi[{hh.id},{t}]", binary=True)
            mode.append(psi)
            prog.add_le([(bc, 1.0), (psi, -b.p_max)], 0.0)
            prog.add_le([(bd, 1.0), (psi, b.p_max)], b.p_max)
            prog.mark_gate(psi, bc, bd)
    return EssVars(soc, charge, discharge, mode)


def build_household_block(
    prog: ConicProgram,
    hh: HouseholdSpec,
    pv: np.ndarray,
    demand: np.ndarray,
    scenario_tag: tuple[int, int] | None = None,
    ess: EssVars | None = None,
) -> tuple[EssVars, ExchangeVars]:
    """Balance, injection split and trade variables for one scenario.

    ``ess`` carries the shared storage block; created on first call.  With a
    scenario tag, trades and grid exchange are scenario-indexed while the
    storage schedule stays shared (nonanticipative).
    """
    pv = np.asarray(pv, dtype=float)
    demand = np.asarray(demand, dtype=float)
    if pv.shape != demand.shape or pv.ndim != 1:
        raise ConfigError(f"{hh.id}: pv/demand trajectories must share length")
    n_slots = len(pv)
    if ess is None:
        ess = add_battery(prog, hh, n_slots)
    sfx = _suffix(scenario_tag)
    ex = ExchangeVars()
    for t in range(n_slots):
        s0 = prog.add_var(f"s0[{hh.id},{t}{sfx}]", lb=0.0)
        b0 = prog.add_var(f"b0[{hh.id},{t}{sfx}]", lb=0.0)
        q = -hh.reactive_ratio * demand[t]
        pp = prog.add_var(f"pP[{hh.id},{t}{sfx}]")
        pq = prog.add_var(f"pQ[{hh.id},{t}{sfx}]", lb=q, ub=q)
        ex.grid_sell[t], ex.grid_buy[t] = s0, b0
        ex.p_net[t], ex.q_net[t] = pp, pq
        # net injection = pv + discharge - demand - charge
        prog.add_eq(
            [(pp, 1.0), (ess.discharge[t], -1.0), (ess.charge[t], 1.0)],
            pv[t] - demand[t],
        )
        split = [(pp, 1.0), (s0, -1.0), (b0, 1.0)]
        for m in sorted(hh.partners):
            s = prog.add_var(f"s[{hh.id},{m},{t}{sfx}]", lb=0.0)
            bb = prog.add_var(f"b[{hh.id},{m},{t}{sfx}]", lb=0.0)
            tr = prog.add_var(f"T[{hh.id},{m},{t}{sfx}]")
            ex.sell[(m, t)], ex.buy[(m, t)], ex.net[(m, t)] = s, bb, tr
            prog.add_eq([(tr, 1.0), (s, -1.0), (bb, 1.0)], 0.0)
            split.extend([(s, -1.0), (bb, 1.0)])
        prog.add_eq(split, 0.0)
    return ess, ex


def enforce_reciprocity(
    prog: ConicProgram,
    exchanges: Mapping[str, ExchangeVars],
    households: Sequence[HouseholdSpec],
    n_slots: int,
) -> int:
    """One equality per unordered pair, direction and slot: s_nmt = b_mnt."""
    validate_partners(households)
    count = 0
    for hh in sorted(households, key=lambda h: h.id):
        for m in sorted(hh.partners):
            if m <= hh.id:
                continue
            for t in range(n_slots):
                prog.add_eq(
                    [(exchanges[hh.id].sell[(m, t)], 1.0),
                     (exchanges[m].buy[(hh.id, t)], -1.0)],
                    0.0,
                )
                prog.add_eq(
                    [(exchanges[m].sell[(hh.id, t)], 1.0),
                     (exchanges[hh.id].buy[(m, t)], -1.0)],
                    0.0,
                )
                count += 2
    return count


# ---------------------------------------------------------------------------
# realized trades
# ---------------------------------------------------------------------------

@dataclass
class TradeLedger:
    """Recorded exchanges (kW) per household, partner and slot."""

    n_slots: int
    sell: dict[tuple[str, str, int], float] = field(default_factory=dict)
    buy: dict[tuple[str, str, int], float] = field(default_factory=dict)
    grid_sell: dict[tuple[str, int], float] = field(default_factory=dict)
    grid_buy: dict[tuple[str, int], float] = field(default_factory=dict)

    def net(self, n: str, m: str, t: int) -> float:
        return self.sell.get((n, m, t), 0.0) - self.buy.get((n, m, t), 0.0)

    def violations(self, tol: float = 1e-7) -> list[str]:
        out = []
        for key, v in list(self.sell.items()) + list(self.buy.items()):
            if v < -tol:
                out.append(f"negative trade {key}")
        for (n, t), v in list(self.grid_sell.items()) + list(self.grid_buy.items()):
            if v < -tol:
                out.append(f"negative grid exchange ({n},{t})")
        for (n, m, t) in self.sell:
            if abs(self.sell[(n, m, t)] - self.buy.get((m, n, t), 0.0)) > tol:
                out.append(f"reciprocity broken for {(n, m, t)}")
        return out


def extract_trades(
    solution,
    exchanges: Mapping[str, ExchangeVars],
    n_slots: int,
) -> TradeLedger:
    ledger = TradeLedger(n_slots=n_slots)
    for hh_id, ex in exchanges.items():
        for t, idx in ex.grid_sell.items():
            ledger.grid_sell[(hh_id, t)] = solution.value(idx)
        for t, idx in ex.grid_buy.items():
            ledger.grid_buy[(hh_id, t)] = solution.value(idx)
        for (m, t), idx in ex.sell.items():
            ledger.sell[(hh_id, m, t)] = solution.value(idx)
        for (m, t), idx in ex.buy.items():
            ledger.buy[(hh_id, m, t)] = solution.value(idx)
    return ledger


# ---------------------------------------------------------------------------
# JSON interface
# ---------------------------------------------------------------------------

def load_households(path: str) -> list[HouseholdSpec]:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read household file {path}: {exc}") from exc
    try:
        households = [
            HouseholdSpec(
                id=row["id"],
                bus=row["bus"],
                partners=frozenset(row.get("partners", [])),
                reactive_ratio=row.get("reactive_ratio", 0.10),
                battery=BatterySpec(**row["battery"]),
            )
            for row in raw
        ]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"household file {path} violates schema: {exc!r}") from exc
    validate_partners(households)
    return households


def save_households(households: Iterable[HouseholdSpec], path: str) -> None:
    rows = []
    for h in sorted(households, key=lambda h: h.id):
        b = h.battery
        rows.append(
            {
                "id": h.id,
                "bus": h.bus,
                "partners": sorted(h.partners),
                "reactive_ratio": h.reactive_ratio,
                "battery": {
                    "eta": b.eta,
                    "e_min": b.e_min,
                    "e_max": b.e_max,
                    "p_max": b.p_max,
                    "e_initial": b.e_initial,
                    "e_final": b.e_final,
                    "dt": b.dt,
                },
            }
        )
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
        fh.write("\n")
