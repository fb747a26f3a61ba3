"""Device-level physics and bidding for the four storage classes.

Every coordinated load is reduced to the same abstractions:

* a flexibility state ``S`` in [-1, 1] (0 = ideal stored energy, +/-1 = the
  user's tolerance bound),
* a one-step linear power model ``P_k = g_next * S_{k+1} + g_now * S_k + base``,
* a non-increasing demand curve mapping a virtual price in [-1, 1] to the
  power the device is willing to draw.

Electric storage (EES) and inverter air conditioners (IVA) modulate power
continuously; EV chargers and fixed-frequency air conditioners (FFA) are
two-state loads.  The math kernels at the bottom operate on numpy arrays so
the fleet engine can evaluate whole populations at once; the scalar API wraps
the same kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .market import DemandCurve

CONTROL_PERIOD_H = 10.0 / 3600.0
SAT_HORIZON_H = 5.0 / 60.0


class ContractViolation(Exception):
    """A caller handed a device an inadmissible input (a bug, not a scenario)."""


class OffGridError(Exception):
    """Raised when an unplugged EV is asked to participate."""


class GesKind(Enum):
    EES = "ees"
    EV = "ev"
    IVA = "iva"
    FFA = "ffa"

    @property
    def continuous(self) -> bool:
        """True for devices that modulate power continuously."""
        return self in (GesKind.EES, GesKind.IVA)


@dataclass(frozen=True)
class EesParams:
    capacity: float          # kWh
    power_nom: float         # kW, symmetric charge/discharge limit
    eta_charge: float
    eta_discharge: float
    energy_min: float        # kWh
    energy_max: float        # kWh
    response_s: float = 10.0

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.power_nom <= 0:
            raise ValueError("power_nom must be positive")
        if not (0 < self.eta_charge <= 1 and 0 < self.eta_discharge <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not (0 <= self.energy_min < self.energy_max <= self.capacity):
            raise ValueError("need 0 <= energy_min < energy_max <= capacity")


@dataclass(frozen=True)
class EvParams:
    capacity: float          # kWh
    power_nom: float         # kW while charging
    eta: float
    t_in: float              # plug-in time, h
    t_dep: float             # departure time, h (may exceed 24 for overnight)
    energy_in: float         # kWh at plug-in
    energy_target: float     # kWh wanted at departure
    deadband: float          # fraction of capacity, e.g. 0.025
    lockout_s: float = 300.0

    def __post_init__(self):
        if self.capacity <= 0 or self.power_nom <= 0:
            raise ValueError("capacity and power_nom must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.t_dep <= self.t_in:
            raise ValueError("t_dep must be after t_in (wrap overnight sessions)")
        if not (0 <= self.energy_in <= self.energy_target <= self.capacity):
            raise ValueError("need 0 <= energy_in <= energy_target <= capacity")
        if self.deadband <= 0:
            raise ValueError("deadband must be positive")


@dataclass(frozen=True)
class TclParams:
    """Thermal envelope plus the electrical model, shared by IVA and FFA.

    The continuously modulating fields (p_min..q2, response_s) matter for
    IVAs; power_nom/cop/lockout_s matter for FFAs.
    """

    r_th: float              # thermal resistance, degC/kW
    c_th: float              # thermal capacitance, kWh/degC
    t_set: float             # setpoint, degC
    t_dev: float             # allowed deviation, degC
    # inverter units (continuous power)
    p_min: float = 0.0
    p_max: float = 0.0
    p1: float = 0.0          # electric power per compressor Hz
    p2: float = 0.0
    q1: float = 0.0          # heat rate per compressor Hz
    q2: float = 0.0
    response_s: float = 60.0
    # fixed-frequency units (on/off)
    power_nom: float = 0.0
    cop: float = 0.0
    lockout_s: float = 300.0

    def __post_init__(self):
        if self.r_th <= 0 or self.c_th <= 0 or self.t_dev <= 0:
            raise ValueError("r_th, c_th and t_dev must be positive")
        if self.p_max > 0 and not (0 < self.p_min < self.p_max and self.q1 > 0):
            raise ValueError("inverter units need 0 < p_min < p_max and q1 > 0")

    @property
    def a(self) -> float:
        """Thermal decay rate, 1/h."""
        return 1.0 / (self.r_th * self.c_th)


@dataclass
class DeviceState:
    energy: float = 0.0      # kWh (EES, EV)
    temp: float = 0.0        # degC (IVA, FFA)
    on: bool = False         # operating state of two-state devices
    lock_until: float = -math.inf   # h; next switch allowed at t >= lock_until
    on_grid: bool = True     # EV connectivity
    power: float = 0.0       # currently committed draw, kW


@dataclass(frozen=True)
class UnifiedCoeffs:
    """One-step linear power model P_k = g_next*S_{k+1} + g_now*S_k + base."""

    g_next: float            # kW per unit of next-step S; negative
    g_now: float             # kW per unit of current S; positive
    base: float              # kW drawn when S holds at zero


@dataclass(frozen=True)
class CharacteristicPowers:
    """The five powers anchoring a continuous device's demand curve."""

    hold: float              # keeps S where it is over one cycle
    sat_min: float           # will not push S past +1 within the horizon
    sat_max: float           # will not push S past -1 within the horizon
    op_min: float            # hardware lower limit this cycle
    op_max: float            # hardware upper limit this cycle


@dataclass(frozen=True)
class RespondDecision:
    power: float
    on: bool
    switched: bool


# ---------------------------------------------------------------------------
# flexibility state

def dos(state: DeviceState, params, kind: GesKind, sim_time: float = 0.0) -> float:
    """Current flexibility state S of a device.

    Positive S means the device is short of stored energy (cold storage: room
    too warm); negative means it holds more than expected.
    """
    if kind is GesKind.EES:
        return 1.0 - 2.0 * state.energy / params.capacity
    if kind is GesKind.EV:
        if not state.on_grid:
            raise OffGridError("unplugged EV does not participate")
        expected = ev_expected_energy(params, sim_time)
        return -(state.energy - expected) / (params.capacity * params.deadband)
    return (state.temp - params.t_set) / params.t_dev


def ev_required_power(params: EvParams) -> float:
    """Constant charging power that lands exactly on the energy target."""
    return (params.energy_target - params.energy_in) / (
        params.eta * (params.t_dep - params.t_in))


def ev_expected_energy(params: EvParams, sim_time: float) -> float:
    """Energy of the nominal constant-power charging ramp at ``sim_time``."""
    p_req = ev_required_power(params)
    return params.energy_in + params.eta * p_req * (sim_time - params.t_in)


# ---------------------------------------------------------------------------
# unified one-step model

def unified_coeffs(params, kind: GesKind, dt_h: float,
                   t_out: float | None = None) -> UnifiedCoeffs:
    """Coefficients of the one-step power model for a step of ``dt_h`` hours."""
    if dt_h <= 0:
        raise ValueError("dt_h must be positive")
    if kind is GesKind.EES:
        k = params.capacity / (2.0 * dt_h)
        return UnifiedCoeffs(-k, k, 0.0)
    if kind is GesKind.EV:
        k = params.capacity * params.deadband / (params.eta * dt_h)
        return UnifiedCoeffs(-k, k, ev_required_power(params))
    alpha = math.exp(-params.a * dt_h)
    if kind is GesKind.IVA:
        beta = params.q1 * params.r_th / params.p1
        gamma = params.r_th * (params.p2 * params.q1 - params.p1 * params.q2) / params.p1
        k = params.t_dev / (beta * (1.0 - alpha))
        return UnifiedCoeffs(-k, alpha * k, (t_out - params.t_set + gamma) / beta)
    beta = params.r_th * params.cop
    k = params.t_dev / (beta * (1.0 - alpha))
    return UnifiedCoeffs(-k, alpha * k, (t_out - params.t_set) / beta)


# ---------------------------------------------------------------------------
# ground-truth physics

def step_physics(state: DeviceState, params, kind: GesKind, power: float,
                 dt_h: float, t_out: float | None = None) -> DeviceState:
    """Advance the plant one control step at the committed ``power``."""
    if kind is GesKind.EES:
        if abs(power) > params.power_nom * (1 + 1e-9):
            raise ContractViolation(f"EES power {power} outside +/-{params.power_nom}")
        if power >= 0:
            de = params.eta_charge * power * dt_h
        else:
            de = power * dt_h / params.eta_discharge
        return replace(state, energy=state.energy + de, power=power)
    if kind is GesKind.EV:
        if not (abs(power) < 1e-9 or abs(power - params.power_nom) < 1e-9):
            raise ContractViolation(f"EV power {power} not in {{0, {params.power_nom}}}")
        return replace(state, energy=state.energy + params.eta * power * dt_h,
                       power=power)
    if kind is GesKind.IVA:
        if not (params.p_min - 1e-9 <= power <= params.p_max + 1e-9):
            raise ContractViolation(f"IVA power {power} outside "
                                    f"[{params.p_min}, {params.p_max}]")
        heat = iva_heat_rate(power, params.p1, params.p2, params.q1, params.q2)
    else:
        if not (abs(power) < 1e-9 or abs(power - params.power_nom) < 1e-9):
            raise ContractViolation(f"FFA power {power} not in {{0, {params.power_nom}}}")
        heat = params.cop * power
    alpha = math.exp(-params.a * dt_h)
    temp = tcl_step(state.temp, t_out, heat, alpha, params.r_th)
    return replace(state, temp=temp, power=power)


def iva_power_for_target(params: TclParams, t_a_now: float, t_out: float,
                         t_target: float, horizon_h: float) -> float:
    """Electric power steering the room from ``t_a_now`` to ``t_target``.

    Solves the exact exponential response for the constant heat-extraction
    rate reaching the target at the end of the horizon, then maps it through
    the compressor's linear electrical model.  The result is not clamped to
    the unit's power limits.
    """
    if horizon_h <= 0:
        raise ValueError("horizon_h must be positive")
    heat = heat_for_target(t_a_now, t_out, t_target, params.a, params.r_th, horizon_h)
    return iva_electric_power(heat, params.p1, params.p2, params.q1, params.q2)


# ---------------------------------------------------------------------------
# demand curves

def characteristic_powers(state: DeviceState, params, kind: GesKind,
                          t_out: float | None = None,
                          horizon_h: float = SAT_HORIZON_H) -> CharacteristicPowers:
    """The five anchor powers of a continuous device's demand curve."""
    if not kind.continuous:
        raise ContractViolation("characteristic powers exist for continuous devices only")
    if kind is GesKind.EES:
        hold = 0.0
        sat_min = params.eta_discharge * (params.energy_min - state.energy) / horizon_h
        sat_max = (params.energy_max - state.energy) / (params.eta_charge * horizon_h)
        op_min, op_max = -params.power_nom, params.power_nom
    else:
        hold = iva_power_for_target(params, state.temp, t_out, state.temp, horizon_h)
        sat_min = iva_power_for_target(params, state.temp, t_out,
                                       params.t_set + params.t_dev, horizon_h)
        sat_max = iva_power_for_target(params, state.temp, t_out,
                                       params.t_set - params.t_dev, horizon_h)
        op_min, op_max = params.p_min, params.p_max
    # float noise must not break the ordering sat_min <= hold <= sat_max
    sat_min = min(sat_min, hold)
    sat_max = max(sat_max, hold)
    return CharacteristicPowers(hold, sat_min, sat_max, op_min, op_max)


def dp_priority(s: float, on: bool) -> float:
    """Bid threshold of a two-state device: its S shifted into the half-plane
    of its current state, so running units outrank idle ones."""
    return (s + 1.0) / 2.0 if on else (s - 1.0) / 2.0


def build_demand_curve(state: DeviceState, params, kind: GesKind,
                       t_out: float | None = None,
                       sim_time: float = 0.0,
                       locked: bool = False,
                       horizon_h: float = SAT_HORIZON_H) -> DemandCurve:
    """Demand curve the device submits this cycle.

    A locked device (dwell-time protection, or a response cycle longer than
    the market cycle) bids a flat curve at its present power.  Continuous
    devices bid the five-point piecewise-linear curve anchored at
    (S, hold power); two-state devices bid a step at their priority value.
    """
    if kind is GesKind.EV and not state.on_grid:
        raise OffGridError("unplugged EV submits no curve")
    if locked:
        return DemandCurve.flat(state.power)
    s = dos(state, params, kind, sim_time)
    if kind.continuous:
        cp = characteristic_powers(state, params, kind, t_out, horizon_h)
        lam, val = cp_curve_knots(np.float64(s), np.float64(cp.hold),
                                  np.float64(cp.sat_min), np.float64(cp.sat_max),
                                  np.float64(cp.op_min), np.float64(cp.op_max))
        return DemandCurve.piecewise(lam, val)
    p_on = params.power_nom
    return DemandCurve.step(dp_priority(s, state.on), p_on)


def respond(state: DeviceState, params, kind: GesKind, curve: DemandCurve,
            price: float, sim_time: float = 0.0, locked: bool = False,
            dt_h: float = CONTROL_PERIOD_H,
            t_out: float | None = None) -> RespondDecision:
    """Local reaction to the broadcast price.

    Continuous devices commit the power their submitted curve prescribes.
    Two-state devices apply the step rule (run iff price <= priority), under
    a comfort override that takes precedence over the price but never over
    an active lockout: if holding the present state would push S beyond +1
    the device must run, beyond -1 it must stop.  The override looks one
    control step ahead so the band is never crossed by quantization.
    """
    if kind.continuous:
        return RespondDecision(curve.evaluate(price), state.on, False)
    if locked:
        return RespondDecision(state.power, state.on, False)
    s = dos(state, params, kind, sim_time)
    want_on = price <= dp_priority(s, state.on)
    p_stay = params.power_nom if state.on else 0.0
    ahead = step_physics(state, params, kind, p_stay, dt_h, t_out=t_out)
    s_stay = dos(ahead, params, kind, sim_time + dt_h)
    if s_stay >= 1.0:
        want_on = True
    elif s_stay <= -1.0:
        want_on = False
    switched = want_on != state.on
    power = params.power_nom if want_on else 0.0
    return RespondDecision(power, want_on, switched)


# ---------------------------------------------------------------------------
# array kernels (shared by the scalar API above and the fleet engine)

def tcl_step(temp, t_out, heat_kw, alpha, r_th):
    """Exact one-step response of the first-order indoor-temperature model."""
    pull = r_th * heat_kw
    return (temp - t_out + pull) * alpha + t_out - pull


def heat_for_target(temp, t_out, target, a, r_th, horizon_h):
    """Constant heat-extraction rate landing on ``target`` after ``horizon_h``."""
    decay = np.exp(-a * horizon_h)
    return ((target - t_out) - (temp - t_out) * decay) / (r_th * (decay - 1.0))


def iva_heat_rate(power, p1, p2, q1, q2):
    """Heat extraction produced when the compressor draws ``power``."""
    return q1 * (power - p2) / p1 + q2


def iva_electric_power(heat, p1, p2, q1, q2):
    """Compressor draw needed for a heat-extraction rate of ``heat``."""
    return p1 * (heat - q2) / q1 + p2


def cp_curve_raw(lam, s, hold, sat_min, sat_max):
    """Unclamped two-segment curve through (1, sat_min), (S, hold), (-1, sat_max).

    All arguments broadcast; ``lam`` may carry extra trailing axes.
    """
    up = (sat_min - hold) / np.maximum(1.0 - s, 1e-12)
    dn = (sat_max - hold) / np.minimum(-1.0 - s, -1e-12)
    d = lam - s
    return hold + d * np.where(d >= 0.0, up, dn)


def cp_curve_eval(lam, s, hold, sat_min, sat_max, op_min, op_max):
    """Final curve value: the raw curve clipped to the operating range."""
    return np.clip(cp_curve_raw(lam, s, hold, sat_min, sat_max), op_min, op_max)


def _cp_cross(level, s, hold, sat_min, sat_max):
    """Price at which the raw curve reaches ``level`` (clipped into [-1, 1])."""
    up = (sat_min - hold) / np.maximum(1.0 - s, 1e-12)
    dn = (sat_max - hold) / np.minimum(-1.0 - s, -1e-12)
    d = level - hold
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_up = s + np.where(up < 0, d / np.where(up < 0, up, 1.0), np.inf)
        lam_dn = s + np.where(dn < 0, d / np.where(dn < 0, dn, 1.0), -np.inf)
    lam = np.where(d < 0, lam_up, np.where(d > 0, lam_dn, s))
    return np.clip(lam, -1.0, 1.0)


def cp_curve_knots(s, hold, sat_min, sat_max, op_min, op_max):
    """Breakpoints of the clamped five-point curve, price-descending.

    Returns ``(lam, val)`` with one trailing axis of length 5.  Inputs
    broadcast, so a whole population is produced in one call.
    """
    s, hold, sat_min, sat_max, op_min, op_max = np.broadcast_arrays(
        s, hold, sat_min, sat_max, op_min, op_max)
    ones = np.ones_like(s)
    lam = np.stack([
        ones,
        _cp_cross(op_min, s, hold, sat_min, sat_max),
        np.clip(s, -1.0, 1.0),
        _cp_cross(op_max, s, hold, sat_min, sat_max),
        -ones,
    ], axis=-1)
    lam = -np.sort(-lam, axis=-1)
    val = cp_curve_eval(lam, s[..., None], hold[..., None], sat_min[..., None],
                        sat_max[..., None], op_min[..., None], op_max[..., None])
    return lam, val
