"""Coordination of generalized energy storage fleets.

A library and simulator for running large mixed fleets of flexible loads
(batteries, EV chargers, inverter and fixed-frequency air conditioners)
against a virtual-price market, with hourly rolling optimization that splits
the fleet's flexibility between an energy market and a frequency-regulation
market.
"""

__version__ = "0.1.0"

from .devices import (
    CharacteristicPowers,
    ContractViolation,
    DeviceState,
    EesParams,
    EvParams,
    GesKind,
    OffGridError,
    TclParams,
    UnifiedCoeffs,
    build_demand_curve,
    characteristic_powers,
    dos,
    ev_expected_energy,
    ev_required_power,
    iva_power_for_target,
    respond,
    step_physics,
    unified_coeffs,
)
from .market import (
    AggregateCurve,
    BidSet,
    ClearingResult,
    DemandCurve,
    aggregate,
    aggregate_bids,
    clear,
    evaluate,
    quantize_price,
)

__all__ = [name for name in dir() if not name.startswith("_")]
