"""Equally likely quantile scenario sets, pinball loss, empirical generation.

Scenario sets hold one trajectory per quantile level; levels are equally
spaced, q_j = j / (|Q|+1), which makes every trajectory equally probable and
lets the stochastic dispatch weight each (pv, demand) scenario pair by
1 / (|Q_pv| * |Q_de|).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainError,
    InsufficientHistory,
    ParseError,
    ValidationError,
)

log = logging.getLogger(__name__)

KINDS = ("pv", "demand")


def equal_quantile_levels(n_quantiles: int) -> tuple[float, ...]:
    """Levels j*delta, delta = 1/(n+1): e.g. 9 -> 0.1 .. 0.9."""
    if n_quantiles < 1:
        raise DomainError("need at least one quantile level")
    delta = 1.0 / (n_quantiles + 1)
    return tuple(j * delta for j in range(1, n_quantiles + 1))


@dataclass(frozen=True)
class QuantileScenarioSet:
    kind: str
    household: str
    quantiles: tuple[float, ...]
    trajectories: np.ndarray  # |Q| x |T|, kW, >= 0, nondecreasing in q

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown scenario kind {self.kind!r}")
        traj = np.asarray(self.trajectories, dtype=float)
        object.__setattr__(self, "trajectories", traj)
        if traj.ndim != 2 or traj.shape[0] != len(self.quantiles):
            raise DimensionMismatch(
                f"{self.household}/{self.kind}: trajectory matrix must be |Q| x |T|"
            )
        expected = equal_quantile_levels(len(self.quantiles))
        if not np.allclose(self.quantiles, expected, atol=1e-9):
            raise ValidationError(
                f"{self.household}/{self.kind}: quantile levels must be equally "
                f"spaced j/(|Q|+1), got {self.quantiles}"
            )
        if np.any(traj < 0):
            raise ValidationError(f"{self.household}/{self.kind}: negative power value")
        if np.any(np.diff(traj, axis=0) < -1e-12):
            raise ValidationError(
                f"{self.household}/{self.kind}: trajectories cross; repair first"
            )

    @property
    def n_slots(self) -> int:
        return self.trajectories.shape[1]

    def trajectory(self, index: int) -> np.ndarray:
        return self.trajectories[index]

    @property
    def median_index(self) -> int:
        levels = np.asarray(self.quantiles)
        idx = int(np.argmin(np.abs(levels - 0.5)))
        if abs(levels[idx] - 0.5) > 1e-9:
            raise ValidationError(
                f"{self.household}/{self.kind}: no q=0.5 level in {self.quantiles}"
            )
        return idx


@dataclass(frozen=True)
class Realization:
    household: str
    pv: np.ndarray
    demand: np.ndarray

    def __post_init__(self):
        pv = np.asarray(self.pv, dtype=float)
        demand = np.asarray(self.demand, dtype=float)
        object.__setattr__(self, "pv", pv)
        object.__setattr__(self, "demand", demand)
        if pv.shape != demand.shape or pv.ndim != 1:
            raise DimensionMismatch(f"{self.household}: pv/demand length mismatch")
        if np.any(pv < 0) or np.any(demand < 0):
            raise ValidationError(f"{self.household}: negative realized power")


def repair_crossing(values: np.ndarray, label: str = "") -> np.ndarray:
    """Sort per slot so trajectories are nondecreasing in q; warn if needed."""
    values = np.asarray(values, dtype=float)
    if np.any(np.diff(values, axis=0) < 0):
        log.warning("quantile crossing repaired by per-slot sort%s",
                    f" ({label})" if label else "")
        return np.sort(values, axis=0)
    return values


# ---------------------------------------------------------------------------
# pinball loss
# ---------------------------------------------------------------------------

def quantile_loss(q: float, forecast: float, actual: float) -> float:
    """(1-q)|f-y| when y <= f, else q|f-y|."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0,1), got {q}")
    err = abs(forecast - actual)
    return (1.0 - q) * err if actual <= forecast else q * err


def scenario_set_loss(scenario_set: QuantileScenarioSet, actual) -> float:
    """(1/|Q|) sum_t sum_q pinball(q, forecast_q[t], actual[t])."""
    actual = np.asarray(actual, dtype=float)
    if actual.shape != (scenario_set.n_slots,):
        raise DimensionMismatch(
            f"actual trajectory has shape {actual.shape}, "
            f"expected ({scenario_set.n_slots},)"
        )
    total = 0.0
    for q, row in zip(scenario_set.quantiles, scenario_set.trajectories):
        for f, y in zip(row, actual):
            total += quantile_loss(q, float(f), float(y))
    return total / len(scenario_set.quantiles)


# ---------------------------------------------------------------------------
# empirical generation (stand-in for an external forecaster)
# ---------------------------------------------------------------------------

def generate_empirical_scenarios(
    history: Mapping[str, np.ndarray],
    kind: str,
    n_quantiles: int,
) -> dict[str, QuantileScenarioSet]:
    """Per-slot empirical quantiles (linear interpolation between order
    statistics, numpy's default rule) over the historical days."""
    levels = equal_quantile_levels(n_quantiles)
    out: dict[str, QuantileScenarioSet] = {}
    for household, days in sorted(history.items()):
        days = np.asarray(days, dtype=float)
        if days.ndim != 2:
            raise DimensionMismatch(f"{household}: history must be days x slots")
        if days.shape[0] < n_quantiles:
            raise InsufficientHistory(
                f"{household}: {days.shape[0]} days < {n_quantiles} quantiles"
            )
        traj = np.quantile(days, levels, axis=0)
        out[household] = QuantileScenarioSet(
            kind=kind,
            household=household,
            quantiles=levels,
            trajectories=repair_crossing(traj, f"{household}/{kind}"),
        )
    return out


def check_same_grid(sets: Iterable[QuantileScenarioSet]) -> tuple[tuple[float, ...], int]:
    """All sets in one study must share quantile levels and horizon."""
    sets = list(sets)
    if not sets:
        raise ValidationError("no scenario sets supplied")
    levels, slots = sets[0].quantiles, sets[0].n_slots
    for s in sets[1:]:
        if s.quantiles != levels or s.n_slots != slots:
            raise DimensionMismatch(
                f"{s.household}/{s.kind}: scenario grid differs from study grid"
            )
    return levels, slots


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def _slot_headers(n: int) -> list[str]:
    return [f"t{k}" for k in range(1, n + 1)]


def write_scenarios_csv(path: str, sets: Iterable[QuantileScenarioSet]) -> None:
    sets = sorted(sets, key=lambda s: (s.household, s.kind))
    n = sets[0].n_slots
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["household", "kind", "quantile"] + _slot_headers(n))
        for s in sets:
            for q, row in zip(s.quantiles, s.trajectories):
                writer.writerow([s.household, s.kind, f"{q:.6g}"] + [f"{v:.6g}" for v in row])


def load_scenarios_csv(path: str) -> dict[str, dict[str, QuantileScenarioSet]]:
    """Returns {household: {"pv": set, "demand": set}}."""
    rows: dict[tuple[str, str], list[tuple[float, np.ndarray]]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["household", "kind", "quantile"]:
                raise ParseError(f"{path}: expected scenario CSV header")
            for rec in reader:
                if not rec:
                    continue
                hh, kind, q = rec[0], rec[1], float(rec[2])
                rows.setdefault((hh, kind), []).append(
                    (q, np.asarray([float(v) for v in rec[3:]]))
                )
    except (OSError, ValueError, StopIteration) as exc:
        raise ParseError(f"cannot read scenario CSV {path}: {exc}") from exc
    out: dict[str, dict[str, QuantileScenarioSet]] = {}
    for (hh, kind), entries in sorted(rows.items()):
        entries.sort(key=lambda e: e[0])
        levels = tuple(q for q, _ in entries)
        traj = repair_crossing(np.vstack([v for _, v in entries]), f"{hh}/{kind}")
        out.setdefault(hh, {})[kind] = QuantileScenarioSet(
            kind=kind, household=hh, quantiles=levels, trajectories=traj
        )
    return out


def write_realizations_csv(path: str, realizations: Iterable[Realization]) -> None:
    realizations = sorted(realizations, key=lambda r: r.household)
    n = len(realizations[0].pv)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["household", "kind"] + _slot_headers(n))
        for r in realizations:
            writer.writerow([r.household, "pv"] + [f"{v:.6g}" for v in r.pv])
            writer.writerow([r.household, "demand"] + [f"{v:.6g}" for v in r.demand])


def load_realizations_csv(path: str) -> dict[str, Realization]:
    data: dict[str, dict[str, np.ndarray]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["household", "kind"]:
                raise ParseError(f"{path}: expected realization CSV header")
            for rec in reader:
                if not rec:
                    continue
                data.setdefault(rec[0], {})[rec[1]] = np.asarray(
                    [float(v) for v in rec[2:]]
                )
    except (OSError, ValueError, StopIteration) as exc:
        raise ParseError(f"cannot read realization CSV {path}: {exc}") from exc
    out = {}
    for hh, kinds in sorted(data.items()):
        if set(kinds) != set(KINDS):
            raise ParseError(f"{path}: household {hh} missing pv or demand row")
        out[hh] = Realization(household=hh, pv=kinds["pv"], demand=kinds["demand"])
    return out


def load_history_csv(path: str) -> dict[str, dict[str, np.ndarray]]:
    """Returns {kind: {household: days x slots array}} from rows
    ``household, kind, date, t1..tT``."""
    rows: dict[tuple[str, str], list[tuple[str, np.ndarray]]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["household", "kind", "date"]:
                raise ParseError(f"{path}: expected history CSV header")
            for rec in reader:
                if not rec:
                    continue
                rows.setdefault((rec[0], rec[1]), []).append(
                    (rec[2], np.asarray([float(v) for v in rec[3:]]))
                )
    except (OSError, ValueError, StopIteration) as exc:
        raise ParseError(f"cannot read history CSV {path}: {exc}") from exc
    out: dict[str, dict[str, np.ndarray]] = {k: {} for k in KINDS}
    for (hh, kind), entries in sorted(rows.items()):
        if kind not in KINDS:
            raise ParseError(f"{path}: unknown kind {kind!r}")
        entries.sort(key=lambda e: e[0])
        out[kind][hh] = np.vstack([v for _, v in entries])
    return out
