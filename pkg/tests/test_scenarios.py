"""Quantile scenario sets, pinball loss, empirical generation, CSV formats."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dermarket.errors import (
    DimensionMismatch,
    DomainError,
    InsufficientHistory,
    ValidationError,
)
from dermarket.scenarios import (
    QuantileScenarioSet,
    Realization,
    equal_quantile_levels,
    generate_empirical_scenarios,
    load_realizations_csv,
    load_scenarios_csv,
    quantile_loss,
    repair_crossing,
    scenario_set_loss,
    write_realizations_csv,
    write_scenarios_csv,
)


def make_set(traj, kind="pv", household="a"):
    traj = np.asarray(traj, dtype=float)
    return QuantileScenarioSet(
        kind=kind,
        household=household,
        quantiles=equal_quantile_levels(traj.shape[0]),
        trajectories=traj,
    )


# ---------------------------------------------------------------------------
# pinball loss
# ---------------------------------------------------------------------------

def test_quantile_loss_over_forecast():
    assert quantile_loss(0.9, 1.0, 2.0) == pytest.approx(0.9)


def test_quantile_loss_under_forecast():
    assert quantile_loss(0.9, 2.0, 1.0) == pytest.approx(0.1)


def test_quantile_loss_exact():
    for q in (0.1, 0.5, 0.77):
        assert quantile_loss(q, 3.0, 3.0) == 0.0


def test_quantile_loss_domain():
    for q in (0.0, 1.0, -0.3, 2.0):
        with pytest.raises(DomainError):
            quantile_loss(q, 1.0, 1.0)


@given(st.floats(0.01, 0.99), st.floats(-50, 50), st.floats(-50, 50))
def test_quantile_loss_nonnegative(q, f, y):
    loss = quantile_loss(q, f, y)
    assert loss >= 0.0
    assert (loss == 0.0) == (f == y)


def test_scenario_set_loss_single_term():
    s = make_set([[3.0]])
    assert scenario_set_loss(s, [5.0]) == pytest.approx(1.0)  # 0.5 * |3-5|


def test_scenario_set_loss_zero_when_exact():
    s = make_set([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    assert scenario_set_loss(s, [1.0, 2.0]) == 0.0


def test_scenario_set_loss_matches_double_loop_oracle():
    traj = np.array([[1.0, 0.5], [2.0, 1.5], [3.0, 2.5]])
    actual = np.array([1.7, 1.2])
    s = make_set(traj)
    expected = 0.0
    for q, row in zip(s.quantiles, traj):  # independent brute-force double sum
        for f, y in zip(row, actual):
            err = abs(f - y)
            expected += (1 - q) * err if y <= f else q * err
    expected /= 3.0
    assert scenario_set_loss(s, actual) == pytest.approx(expected, abs=1e-12)


def test_scenario_set_loss_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        scenario_set_loss(make_set([[1.0, 2.0]]), [1.0])


# ---------------------------------------------------------------------------
# empirical generation
# ---------------------------------------------------------------------------

def test_empirical_nine_point_interpolation():
    history = {"a": np.arange(1.0, 10.0).reshape(9, 1)}
    sets = generate_empirical_scenarios(history, "pv", 9)
    # linear interpolation between order statistics: value(q) = 1 + 8q
    expected = [1.0 + 8.0 * q for q in equal_quantile_levels(9)]
    assert np.allclose(sets["a"].trajectories[:, 0], expected)
    assert sets["a"].trajectories[0, 0] == pytest.approx(1.8)
    assert sets["a"].trajectories[-1, 0] == pytest.approx(8.2)


def test_empirical_constant_history():
    history = {"a": np.full((12, 4), 2.5)}
    sets = generate_empirical_scenarios(history, "demand", 5)
    assert np.allclose(sets["a"].trajectories, 2.5)


def test_empirical_single_quantile_is_median():
    history = {"a": np.array([[1.0], [5.0], [100.0]])}
    sets = generate_empirical_scenarios(history, "pv", 1)
    assert sets["a"].quantiles == (0.5,)
    assert sets["a"].trajectories[0, 0] == pytest.approx(5.0)


def test_empirical_insufficient_history():
    with pytest.raises(InsufficientHistory):
        generate_empirical_scenarios({"a": np.ones((3, 4))}, "pv", 9)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def test_levels_must_be_equally_spaced():
    with pytest.raises(ValidationError):
        QuantileScenarioSet(
            kind="pv", household="a", quantiles=(0.1, 0.2, 0.9),
            trajectories=np.ones((3, 2)),
        )


def test_negative_values_rejected():
    with pytest.raises(ValidationError):
        make_set([[-0.1]])


def test_crossing_rejected_but_repairable():
    crossing = np.array([[2.0, 1.0], [1.0, 2.0]])
    with pytest.raises(ValidationError, match="cross"):
        make_set(crossing)
    repaired = repair_crossing(crossing)
    assert np.all(np.diff(repaired, axis=0) >= 0)
    made = make_set(repaired)
    assert made.n_slots == 2


@given(st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_generated_sets_are_monotone(n_q, n_slots, seed):
    rng = np.random.default_rng(seed)
    history = {"h": rng.uniform(0, 5, size=(n_q + 5, n_slots))}
    sets = generate_empirical_scenarios(history, "pv", n_q)
    assert np.all(np.diff(sets["h"].trajectories, axis=0) >= -1e-12)


def test_median_index():
    s = make_set(np.ones((9, 2)))
    assert s.quantiles[s.median_index] == pytest.approx(0.5)
    even = make_set(np.ones((2, 2)))
    with pytest.raises(ValidationError):
        _ = even.median_index


# ---------------------------------------------------------------------------
# CSV round-trips
# ---------------------------------------------------------------------------

def test_scenario_csv_roundtrip(tmp_path):
    sets = [
        make_set([[1.0, 2.0], [2.0, 3.0], [3.0, 4.0]], kind="pv"),
        make_set([[0.5, 0.25], [1.0, 0.5], [1.5, 0.75]], kind="demand"),
    ]
    path = str(tmp_path / "scen.csv")
    write_scenarios_csv(path, sets)
    loaded = load_scenarios_csv(path)
    assert np.allclose(loaded["a"]["pv"].trajectories, sets[0].trajectories)
    assert np.allclose(loaded["a"]["demand"].trajectories, sets[1].trajectories)
    assert loaded["a"]["pv"].quantiles == sets[0].quantiles


def test_realization_csv_roundtrip(tmp_path):
    reals = [
        Realization(household="a", pv=np.array([1.0, 0.0]), demand=np.array([0.5, 0.7])),
        Realization(household="b", pv=np.array([2.0, 1.0]), demand=np.array([0.1, 0.2])),
    ]
    path = str(tmp_path / "real.csv")
    write_realizations_csv(path, reals)
    loaded = load_realizations_csv(path)
    assert np.allclose(loaded["a"].pv, [1.0, 0.0])
    assert np.allclose(loaded["b"].demand, [0.1, 0.2])
