"""Battery dynamics, household constraint blocks, trade reciprocity."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dermarket.community import (
    BatterySpec,
    TradeLedger,
    battery_step,
    build_household_block,
    enforce_reciprocity,
    extract_trades,
    validate_partners,
)
from dermarket.errors import BoundsError, ConfigError, ValidationError
from dermarket.solver import ConicProgram, solve_continuous, solve_mixed

from conftest import make_household, small_battery


# ---------------------------------------------------------------------------
# battery_step
# ---------------------------------------------------------------------------

def test_battery_step_charging():
    spec = small_battery()
    assert battery_step(spec, 5.0, 2.0, 0.0) == pytest.approx(6.9)


def test_battery_step_discharging():
    spec = small_battery()
    assert battery_step(spec, 5.0, 0.0, 1.9) == pytest.approx(3.0)


def test_battery_step_identity():
    spec = small_battery()
    assert battery_step(spec, 5.0, 0.0, 0.0) == 5.0


def test_battery_step_bounds():
    spec = small_battery()
    with pytest.raises(BoundsError):
        battery_step(spec, 13.0, 3.3, 0.0)


def test_battery_spec_invariants():
    with pytest.raises(ValidationError):
        small_battery(eta=1.2)
    with pytest.raises(ValidationError):
        small_battery(e_initial=20.0)
    with pytest.raises(ValidationError):
        small_battery(e_final=0.0)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0, 3.3), st.floats(0, 3.3)), min_size=1, max_size=24))
def test_soc_telescoping(actions):
    """E_{T+1} - E_1 equals the summed net charge exactly."""
    spec = BatterySpec(eta=0.9, e_min=0.0, e_max=1e9, p_max=3.3,
                       e_initial=50.0, e_final=50.0)
    soc = spec.e_initial
    total = 0.0
    for charge, discharge in actions:
        soc = soc + (spec.eta * charge - discharge / spec.eta) * spec.dt
        total += (spec.eta * charge - discharge / spec.eta) * spec.dt
    assert soc - spec.e_initial == pytest.approx(total, abs=1e-9)


# ---------------------------------------------------------------------------
# household blocks
# ---------------------------------------------------------------------------

def test_balanced_household_only_solution_is_zero():
    hh = make_household("a", 1, e_initial=1.0, e_final=1.0, e_min=0.0, e_max=2.0)
    prog = ConicProgram()
    ess, ex = build_household_block(prog, hh, np.zeros(1), np.zeros(1))
    sol = solve_mixed(prog)
    assert sol.value(ex.grid_sell[0]) == pytest.approx(0.0, abs=1e-8)
    assert sol.value(ex.grid_buy[0]) == pytest.approx(0.0, abs=1e-8)
    assert sol.value(ess.charge[0]) == pytest.approx(0.0, abs=1e-8)
    assert sol.value(ess.discharge[0]) == pytest.approx(0.0, abs=1e-8)


def test_surplus_household_balance_identity():
    """pv=2, demand=1: net injection is 1 minus whatever charges the battery."""
    hh = make_household("a", 1, e_initial=1.0, e_final=1.0, e_min=0.0, e_max=5.0)
    prog = ConicProgram()
    ess, ex = build_household_block(prog, hh, np.array([2.0]), np.array([1.0]))
    # force a few charge levels and verify the balance each time (the
    # terminal equality then pins a matching discharge; both move P)
    for level in (0.0, 0.5, 1.0):
        sol = solve_continuous(
            prog,
            overrides=None if level == 0.0 else None,
            feas_tol=1e-7,
        ) if level == 0.0 else None
        # solve once unforced, then check the balance residual identity
        if sol is None:
            continue
        p = sol.value(ex.p_net[0])
        bal = 2.0 + sol.value(ess.discharge[0]) - 1.0 - sol.value(ess.charge[0])
        assert p == pytest.approx(bal, abs=1e-7)


def test_balance_residual_over_charge_grid():
    """Brute-force: pin charge to a grid and verify the balance equation."""
    for level in (0.0, 0.5, 1.0):
        hh = make_household("a", 1, e_initial=1.0, e_final=1.0, e_min=0.0,
                            e_max=5.0, eta=1.0)
        prog = ConicProgram()
        ess, ex = build_household_block(prog, hh, np.array([2.0]), np.array([1.0]))
        prog.lb[ess.charge[0]] = level
        prog.ub[ess.charge[0]] = level
        prog.lb[ess.discharge[0]] = level  # lossless: terminal forces d == c
        prog.ub[ess.discharge[0]] = level
        sol = solve_continuous(prog)
        assert sol.value(ex.p_net[0]) == pytest.approx(1.0, abs=1e-7)
        assert sol.value(ex.grid_sell[0]) - sol.value(ex.grid_buy[0]) == pytest.approx(
            1.0, abs=1e-7
        )


def test_scenario_tag_shares_storage_duplicates_trades():
    hh_a = make_household("a", 1, partners={"b"})
    hh_b = make_household("b", 2, partners={"a"})
    prog = ConicProgram()
    ess_a = None
    exchanges = {}
    for tag in ((0, 0), (1, 0)):
        ess_a, ex = build_household_block(
            prog, hh_a, np.ones(3), np.ones(3), scenario_tag=tag, ess=ess_a
        )
        exchanges[tag] = ex
    assert exchanges[(0, 0)].sell.keys() == exchanges[(1, 0)].sell.keys()
    assert exchanges[(0, 0)].sell[("b", 0)] != exchanges[(1, 0)].sell[("b", 0)]
    soc_names = [n for n in prog.names if n.startswith("E[a")]
    assert len(soc_names) == 4  # one shared storage trajectory (T+1)
    trade_names = [n for n in prog.names if n.startswith("s[a,b")]
    assert len(trade_names) == 6  # duplicated per scenario


def test_degenerate_household_without_battery():
    hh = make_household("a", 1, p_max=0.0, e_min=1.0, e_max=1.0,
                        e_initial=1.0, e_final=1.0)
    prog = ConicProgram()
    ess, ex = build_household_block(prog, hh, np.array([1.0]), np.array([0.5]))
    assert ess.mode == []
    sol = solve_mixed(prog)
    assert sol.value(ex.p_net[0]) == pytest.approx(0.5, abs=1e-8)


# ---------------------------------------------------------------------------
# reciprocity
# ---------------------------------------------------------------------------

def _blocks(prog, households, n_slots):
    exchanges = {}
    for hh in households:
        _, ex = build_household_block(
            prog, hh, np.ones(n_slots), np.ones(n_slots)
        )
        exchanges[hh.id] = ex
    return exchanges


def test_reciprocity_pair_count_single_slot():
    a = make_household("a", 1, partners={"b"})
    b = make_household("b", 2, partners={"a"})
    prog = ConicProgram()
    exchanges = _blocks(prog, [a, b], 1)
    assert enforce_reciprocity(prog, exchanges, [a, b], 1) == 2


def test_reciprocity_empty_graph():
    a = make_household("a", 1)
    prog = ConicProgram()
    exchanges = _blocks(prog, [a], 1)
    assert enforce_reciprocity(prog, exchanges, [a], 1) == 0


def test_reciprocity_three_fully_connected_24_slots():
    ids = ("a", "b", "c")
    households = [
        make_household(i, 1, partners=set(ids) - {i}) for i in ids
    ]
    prog = ConicProgram()
    exchanges = _blocks(prog, households, 24)
    assert enforce_reciprocity(prog, exchanges, households, 24) == 144


def test_partner_asymmetry_rejected():
    a = make_household("a", 1, partners={"b"})
    b = make_household("b", 2)
    with pytest.raises(ConfigError, match="not reciprocated"):
        validate_partners([a, b])


def test_net_trade_antisymmetry_at_solution():
    a = make_household("a", 1, partners={"b"}, e_min=1.0, e_max=1.0,
                       e_initial=1.0, e_final=1.0, p_max=0.0)
    b = make_household("b", 2, partners={"a"}, e_min=1.0, e_max=1.0,
                       e_initial=1.0, e_final=1.0, p_max=0.0)
    prog = ConicProgram()
    exchanges = {}
    for hh, pv, de in ((a, [2.0], [0.0]), (b, [0.0], [1.5])):
        _, ex = build_household_block(prog, hh, np.array(pv), np.array(de))
        exchanges[hh.id] = ex
    enforce_reciprocity(prog, exchanges, [a, b], 1)
    # make P2P strictly attractive: grid buy dear, grid sell cheap
    for ex in exchanges.values():
        prog.add_cost(ex.grid_buy[0], 0.2)
        prog.add_cost(ex.grid_sell[0], -0.05)
    sol = solve_mixed(prog)
    ledger = extract_trades(sol, exchanges, 1)
    assert ledger.violations(tol=1e-7) == []
    assert ledger.net("a", "b", 0) == pytest.approx(-ledger.net("b", "a", 0), abs=1e-8)
    assert ledger.net("a", "b", 0) == pytest.approx(1.5, abs=1e-6)


def test_trade_ledger_violation_detection():
    ledger = TradeLedger(n_slots=1)
    ledger.sell[("a", "b", 0)] = 1.0
    ledger.buy[("b", "a", 0)] = 0.5
    assert any("reciprocity" in v for v in ledger.violations())
