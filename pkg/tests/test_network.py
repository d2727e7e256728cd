"""Feeder model loading, validation and household aggregation."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dermarket.errors import ParseError, UnknownHousehold, ValidationError
from dermarket.fixtures import standard_case
from dermarket.network import (
    load_network,
    map_household_injections,
    save_network,
    validate_radial,
)

from conftest import SLACK, make_radial_net


def _write(tmp_path, payload):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(payload))
    return str(path)


def test_load_minimal_two_bus(tmp_path):
    path = _write(
        tmp_path,
        {
            "base_mva": 1.0,
            "slack": SLACK,
            "buses": [
                {"id": 0, "parent": None, "line": None},
                {"id": 1, "parent": 0,
                 "line": {"r": 0.01, "x": 0.01, "s_max": 1.0}},
            ],
        },
    )
    net = load_network(path)
    assert len(net.buses) == 2
    assert len(net.lines) == 1
    assert net.bus(1).parent == 0


def test_cycle_detected(tmp_path):
    path = _write(
        tmp_path,
        {
            "base_mva": 1.0,
            "slack": SLACK,
            "buses": [
                {"id": 0, "parent": None, "line": None},
                {"id": 1, "parent": 0, "line": {"r": 0.01, "x": 0.01, "s_max": 1.0}},
                {"id": 2, "parent": 3, "line": {"r": 0.01, "x": 0.01, "s_max": 1.0}},
                {"id": 3, "parent": 2, "line": {"r": 0.01, "x": 0.01, "s_max": 1.0}},
            ],
        },
    )
    with pytest.raises(ValidationError, match="cycle"):
        load_network(path)


def test_malformed_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_network(str(path))


def test_bundled_feeder_counts():
    case = standard_case(n_quantiles=3)
    assert len(case.net.buses) == 15
    assert len(case.net.lines) == 14
    mapped = sum(len(m) for m in case.net.bus_households.values())
    assert mapped == 50
    assert validate_radial(case.net) == []


def test_save_load_roundtrip(tmp_path, three_bus_net):
    path = str(tmp_path / "net.json")
    save_network(three_bus_net, path)
    loaded = load_network(path)
    assert loaded == three_bus_net


def test_validate_radial_clean(two_bus_net):
    assert validate_radial(two_bus_net) == []


def test_validate_orphan_bus():
    # bus 5 parents a non-existent bus
    with pytest.raises(ValidationError, match="missing parent|unreachable"):
        make_radial_net({1: 0, 5: 9})


def test_line_count_exceeds_radial_bound(two_bus_net):
    from dermarket.network import Line, NetworkModel

    doubled = NetworkModel(
        buses=two_bus_net.buses,
        lines=two_bus_net.lines + (Line(to_bus=0, r=0.01, x=0.01, s_max=1.0),),
        slack=two_bus_net.slack,
        base_mva=1.0,
        bus_households=two_bus_net.bus_households,
    )
    assert any("radial bound" in v for v in validate_radial(doubled))


def test_duplicate_household_mapping():
    with pytest.raises(ValidationError, match="mapped to buses"):
        make_radial_net({1: 0, 2: 1}, households={1: ["a"], 2: ["a"]})


def test_map_household_injections_direct(three_bus_net):
    h_p, h_q = map_household_injections(
        three_bus_net, {"a": (1.0, -0.1), "b": (-0.4, -0.05)}
    )
    assert h_p[1] == pytest.approx(1.0)
    assert h_p[2] == pytest.approx(-0.4)
    assert h_p[0] == 0.0 and h_q[0] == 0.0
    assert h_q[1] == pytest.approx(-0.1)


def test_map_unknown_household(three_bus_net):
    with pytest.raises(UnknownHousehold):
        map_household_injections(three_bus_net, {"zz": (1.0, 0.0)})


def test_map_aggregation_against_reaggregation_oracle():
    case = standard_case(n_quantiles=3)
    rng = np.random.default_rng(7)
    injections = {
        hh.id: (float(rng.normal()), float(rng.normal() * 0.1))
        for hh in case.households
    }
    h_p, h_q = map_household_injections(case.net, injections)
    # brute-force re-summation per bus
    for bus in case.net.buses:
        members = case.net.bus_households.get(bus.id, frozenset())
        assert h_p[bus.id] == pytest.approx(
            sum(injections[m][0] for m in members), abs=1e-12
        )
        assert h_q[bus.id] == pytest.approx(
            sum(injections[m][1] for m in members), abs=1e-12
        )
    # no power created or lost
    assert sum(h_p.values()) == pytest.approx(
        sum(p for p, _ in injections.values()), abs=1e-9
    )


@given(st.floats(-10, 10))
def test_map_aggregation_linearity(alpha):
    net = make_radial_net({1: 0, 2: 1}, households={1: ["a", "b"], 2: ["c"]})
    base = {"a": (1.5, -0.2), "b": (-0.7, 0.0), "c": (0.3, -0.1)}
    scaled = {k: (alpha * p, alpha * q) for k, (p, q) in base.items()}
    h_p, _ = map_household_injections(net, base)
    s_p, _ = map_household_injections(net, scaled)
    for bus_id in h_p:
        assert s_p[bus_id] == pytest.approx(alpha * h_p[bus_id], abs=1e-9)


def test_radiality_dfs_visits_all():
    case = standard_case(n_quantiles=3)
    seen = set()
    stack = [0]
    while stack:
        node = stack.pop()
        assert node not in seen
        seen.add(node)
        stack.extend(case.net.bus(node).children)
    assert seen == {b.id for b in case.net.buses}
    assert len(case.net.lines) == len(case.net.buses) - 1
