"""Command-line entry point: files in, pipeline, reports out.

Exit codes: 0 success, 1 validation failure, 2 solver failure, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fixtures
from .baselines import compare_methods
from .community import BatteryState, TradeLedger, load_households
from .dayahead import (
    DayAheadResult,
    MarketParams,
    PriceBook,
    load_tariff_csv,
    run_day_ahead,
)
from .errors import DerMarketError, SolverError
from .network import load_network, validate_radial
from .realtime import RealTimeResult, run_real_time
from .reports import (
    write_comparison_reports,
    write_day_ahead_reports,
    write_real_time_reports,
    write_settlement_reports,
)
from .scenarios import (
    generate_empirical_scenarios,
    load_history_csv,
    load_realizations_csv,
    load_scenarios_csv,
    write_scenarios_csv,
)
from .settlement import settle

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _market_params(args) -> MarketParams:
    overrides = {}
    if getattr(args, "params", None):
        overrides.update(json.loads(args.params))
    if getattr(args, "theta", None) is not None:
        overrides["theta"] = args.theta
    return MarketParams(**{**MarketParams().__dict__, **overrides})


def _alignment_errors(net, households) -> list[str]:
    errors = []
    mapped = {hh: bus for bus, members in net.bus_households.items() for hh in members}
    for hh in households:
        if hh.id not in mapped:
            errors.append(f"household {hh.id} missing from the network mapping")
        elif mapped[hh.id] != hh.bus:
            errors.append(
                f"household {hh.id} mapped to bus {mapped[hh.id]} but declares {hh.bus}"
            )
    known = {hh.id for hh in households}
    for hh_id in mapped:
        if hh_id not in known:
            errors.append(f"network maps unknown household {hh_id}")
    return errors


def load_day_ahead_schedule(path: str, households) -> DayAheadResult:
    """Rebuild the committed schedule from schedule.json (round-trip)."""
    with open(path) as fh:
        raw = json.load(fh)
    specs = {hh.id: hh.battery for hh in households}
    ess = {}
    for hh_id, rows in raw["ess"].items():
        ess[hh_id] = BatteryState(
            spec=specs[hh_id],
            soc=np.asarray(rows["soc"]),
            charge=np.asarray(rows["charge"]),
            discharge=np.asarray(rows["discharge"]),
            mode=np.asarray(rows["mode"], dtype=float),
        )
    scenario_cost = {
        tuple(int(x) for x in key.split(",")): val
        for key, val in raw.get("scenario_energy_cost", {}).items()
    }
    return DayAheadResult(
        ess_schedule=ess,
        trades={},
        flows={},
        duals={},
        prices=None,
        slack=None,
        expected_cost=raw["expected_cost"],
        dso_expected_cost=raw["dso_expected_cost"],
        scenario_energy_cost=scenario_cost,
        iterations=raw["iterations"],
        converged=raw["converged"],
        trace=raw.get("trace", []),
        n_slots=raw["n_slots"],
        dt=raw["dt"],
    )


def load_real_time_results(path: str) -> list[RealTimeResult]:
    """Rebuild trades and prices per slot from realtime.json (settlement view)."""
    with open(path) as fh:
        raw = json.load(fh)
    out = []
    n_slots = len(raw["slots"])
    for row in raw["slots"]:
        t = row["slot"]
        trades = TradeLedger(n_slots=1)
        for key, v in row["trades"]["grid_sell"].items():
            n, _ = key.split("@")
            trades.grid_sell[(n, t)] = v
        for key, v in row["trades"]["grid_buy"].items():
            n, _ = key.split("@")
            trades.grid_buy[(n, t)] = v
        for key, v in row["trades"]["sell"].items():
            pair, _ = key.split("@")
            n, m = pair.split("->")
            trades.sell[(n, m, t)] = v
        for key, v in row["trades"]["buy"].items():
            pair, _ = key.split("@")
            n, m = pair.split("<-")
            trades.buy[(n, m, t)] = v
        gmp = np.zeros(n_slots)
        gmp[t] = row["prices"]["gmp"]
        book = PriceBook(gmp=gmp)
        for key, v in row["prices"]["elp"].items():
            n, m = key.split("|")
            book.elp[(n, m, t, 0, 0)] = v
        out.append(
            RealTimeResult(
                slot=t,
                trades=trades,
                flows=None,
                prices=book,
                cost=row["cost"],
                energy_cost=row["energy_cost"],
                adjustments={},
                flow_violation=row["flow_violation"],
                volt_violation=row["volt_violation"],
            )
        )
    return out


def _load_case_args(args):
    net = load_network(args.network)
    households = load_households(args.households)
    return net, households


def _cmd_validate(args) -> int:
    net = load_network(args.network)
    households = load_households(args.households)
    problems = validate_radial(net) + _alignment_errors(net, households)
    if problems:
        for p in problems:
            print(f"FAIL: {p}")
        return EXIT_VALIDATION
    print(f"OK: {len(net.buses)} buses, {len(net.lines)} lines, "
          f"{len(households)} households")
    return EXIT_OK


def _cmd_gen_scenarios(args) -> int:
    history = load_history_csv(args.history)
    sets = []
    for kind in ("pv", "demand"):
        sets.extend(
            generate_empirical_scenarios(history[kind], kind, args.n_quantiles).values()
        )
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "scenarios.csv")
    write_scenarios_csv(out, sets)
    print(out)
    return EXIT_OK


def _cmd_day_ahead(args) -> int:
    net, households = _load_case_args(args)
    sets = load_scenarios_csv(args.scenarios)
    tariff = load_tariff_csv(args.tariff)
    if args.dump_lp:
        os.makedirs(args.dump_lp, exist_ok=True)
    result = run_day_ahead(
        net,
        households,
        {hh: kinds["pv"] for hh, kinds in sets.items()},
        {hh: kinds["demand"] for hh, kinds in sets.items()},
        tariff,
        _market_params(args),
        dump_lp_dir=args.dump_lp,
    )
    for path in write_day_ahead_reports(result, args.out, no_flows=args.no_flows):
        print(path)
    return EXIT_OK


def _cmd_real_time(args) -> int:
    net, households = _load_case_args(args)
    tariff = load_tariff_csv(args.tariff)
    day_ahead = load_day_ahead_schedule(args.day_ahead, households)
    realizations = load_realizations_csv(args.realization)
    params = _market_params(args)
    if args.dump_lp:
        os.makedirs(args.dump_lp, exist_ok=True)
    results = run_real_time(
        net,
        households,
        day_ahead,
        realizations,
        tariff,
        theta=params.theta,
        params=params,
        on_infeasible="relax" if args.relax_limits else "abort",
        dump_lp_dir=args.dump_lp,
    )
    for path in write_real_time_reports(results, args.out, no_flows=args.no_flows):
        print(path)
    return EXIT_OK


def _cmd_settle(args) -> int:
    households = load_households(args.households)
    tariff = load_tariff_csv(args.tariff)
    results = load_real_time_results(args.realtime)
    partners = {hh.id: sorted(hh.partners) for hh in households}
    record = settle(results, tariff, partners, dt=households[0].battery.dt)
    for path in write_settlement_reports(record, results, partners, args.out):
        print(path)
    return EXIT_OK


def _cmd_compare(args) -> int:
    net, households = _load_case_args(args)
    sets = load_scenarios_csv(args.scenarios)
    tariff = load_tariff_csv(args.tariff)
    realizations = load_realizations_csv(args.realization)
    comparison = compare_methods(
        net,
        households,
        {hh: kinds["pv"] for hh, kinds in sets.items()},
        {hh: kinds["demand"] for hh, kinds in sets.items()},
        tariff,
        realizations,
        _market_params(args),
    )
    for path in write_comparison_reports(comparison, args.out):
        print(path)
    return EXIT_OK


def _cmd_demo(args) -> int:
    """End-to-end run on the bundled congestion study."""
    case = fixtures.congestion_case(n_quantiles=3, seed=args.seed)
    params = _market_params(args)
    out = args.out
    day_ahead = run_day_ahead(
        case.net, case.households, case.pv_sets, case.de_sets, case.tariff, params
    )
    manifest = write_day_ahead_reports(day_ahead, out, no_flows=args.no_flows)
    results = run_real_time(
        case.net, case.households, day_ahead, case.realizations, case.tariff,
        theta=params.theta, params=params, on_infeasible="relax",
    )
    manifest += write_real_time_reports(results, out, no_flows=args.no_flows)
    partners = {hh.id: sorted(hh.partners) for hh in case.households}
    record = settle(results, case.tariff, partners)
    manifest += write_settlement_reports(record, results, partners, out)
    comparison = compare_methods(
        case.net, case.households, case.pv_sets, case.de_sets, case.tariff,
        case.realizations, params,
    )
    manifest += write_comparison_reports(comparison, out)
    for path in manifest:
        print(path)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="dermarket", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, scenarios=False, realization=False, tariff=False, out=False):
        p.add_argument("--network", required=True)
        p.add_argument("--households", required=True)
        if scenarios:
            p.add_argument("--scenarios", required=True)
        if tariff:
            p.add_argument("--tariff", required=True)
        if realization:
            p.add_argument("--realization", required=True)
        if out:
            p.add_argument("--out", required=True)
            p.add_argument("--params", help="JSON object of market parameters")
            p.add_argument("--theta", type=float)
            p.add_argument("--dump-lp", dest="dump_lp")
            p.add_argument("--no-flows", dest="no_flows", action="store_true")

    p = sub.add_parser("validate", help="check network and household files")
    common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("gen-scenarios", help="empirical quantile scenarios from history")
    p.add_argument("--history", required=True)
    p.add_argument("--n-quantiles", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_scenarios)

    p = sub.add_parser("day-ahead", help="run the day-ahead market")
    common(p, scenarios=True, tariff=True, out=True)
    p.set_defaults(func=_cmd_day_ahead)

    p = sub.add_parser("real-time", help="clear every slot against realized data")
    common(p, realization=True, tariff=True, out=True)
    p.add_argument("--day-ahead", dest="day_ahead", required=True,
                   help="schedule.json from the day-ahead run")
    p.add_argument("--relax-limits", action="store_true",
                   help="measure violations instead of aborting on them")
    p.set_defaults(func=_cmd_real_time)

    p = sub.add_parser("settle", help="end-of-day payments from recorded exchanges")
    p.add_argument("--households", required=True)
    p.add_argument("--tariff", required=True)
    p.add_argument("--realtime", required=True, help="realtime.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_settle)

    p = sub.add_parser("compare", help="offline / proposed / point-forecast comparison")
    common(p, scenarios=True, realization=True, tariff=True, out=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("demo", help="bundled fixtures end to end")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=fixtures.DEFAULT_SEED)
    p.add_argument("--params", help="JSON object of market parameters")
    p.add_argument("--theta", type=float)
    p.add_argument("--no-flows", dest="no_flows", action="store_true")
    p.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DerMarketError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
