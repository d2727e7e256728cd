"""Bilateral distribution energy market simulator.

Day-ahead stochastic scheduling of household batteries and peer-to-peer
trades over quantile scenarios, scenario AC-OPF clearing with locational
prices on a radial feeder, real-time re-clearing against realized data, and
end-of-day settlement.
"""

__version__ = "0.1.0"

from .community import BatterySpec, HouseholdSpec, TradeLedger, battery_step
from .dayahead import (
    DayAheadResult,
    MarketParams,
    PriceBook,
    TariffSchedule,
    compose_iglp,
    dlmp_coefficients,
    grid_mid_price,
    run_day_ahead,
    scenario_node_price,
    update_bilateral_price,
)
from .network import NetworkModel, load_network, map_household_injections, validate_radial
from .scenarios import (
    QuantileScenarioSet,
    Realization,
    generate_empirical_scenarios,
    quantile_loss,
    scenario_set_loss,
)

__all__ = [
    "BatterySpec",
    "DayAheadResult",
    "HouseholdSpec",
    "MarketParams",
    "NetworkModel",
    "PriceBook",
    "QuantileScenarioSet",
    "Realization",
    "TariffSchedule",
    "TradeLedger",
    "battery_step",
    "compose_iglp",
    "dlmp_coefficients",
    "generate_empirical_scenarios",
    "grid_mid_price",
    "load_network",
    "map_household_injections",
    "quantile_loss",
    "run_day_ahead",
    "scenario_node_price",
    "scenario_set_loss",
    "update_bilateral_price",
    "validate_radial",
]
