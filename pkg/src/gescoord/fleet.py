"""Population engine: whole-fleet state kept in arrays, one kernel call per
cycle instead of one Python call per device.

Each device class holds its parameter and state vectors; the orchestrating
:class:`Fleet` produces the cycle's bids as a :class:`~gescoord.market.BidSet`,
applies the broadcast price, and advances the ground-truth physics.  The math
is the same kernels the scalar device API uses, so the two paths cannot
drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .devices import (
    GesKind,
    cp_curve_eval,
    iva_electric_power,
    iva_heat_rate,
    tcl_step,
)
from .market import BidSet


@dataclass(frozen=True)
class EesDef:
    count: int = 10
    capacity: tuple = (40.0, 50.0)        # kWh
    power: tuple = (40.0, 50.0)           # kW
    eta_charge: float = 0.9
    eta_discharge: float = 0.9
    soc_bounds: tuple = (0.1, 0.9)
    soc_init: float = 0.5
    response_s: float = 10.0


@dataclass(frozen=True)
class EvDef:
    count: int = 20
    capacity: tuple = (20.0, 30.0)
    power: tuple = (6.0, 8.0)
    eta: float = 0.9
    arrive: tuple = (18.0, 22.0)          # plug-in hour
    depart: tuple = (6.0, 9.0)            # next-day departure hour
    deadband_pct: float = 2.5
    soc_target: tuple = (0.75, 0.85)
    soc_arrive: tuple = (0.3, 0.5)
    lockout_min: float = 5.0


@dataclass(frozen=True)
class IvaDef:
    count: int = 100
    r_th: tuple = (1.0, 1.5)
    c_th: tuple = (0.8, 1.2)
    t_set: tuple = (23.0, 28.0)
    t_dev: tuple = (2.0, 3.0)
    p_min: tuple = (0.4, 0.5)
    p_max: tuple = (5.0, 6.0)
    p1: float = 0.03
    p2: float = -0.4
    q1: float = 0.06
    q2: float = -0.3
    response_s: float = 60.0


@dataclass(frozen=True)
class FfaDef:
    count: int = 100
    r_th: tuple = (1.0, 1.5)
    c_th: tuple = (0.8, 1.2)
    t_set: tuple = (23.0, 28.0)
    t_dev: tuple = (2.0, 3.0)
    power: tuple = (4.5, 5.5)
    cop: tuple = (3.0, 4.0)
    lockout_min: float = 5.0


@dataclass(frozen=True)
class FleetDef:
    ees: EesDef = field(default_factory=EesDef)
    ev: EvDef = field(default_factory=EvDef)
    iva: IvaDef = field(default_factory=IvaDef)
    ffa: FfaDef = field(default_factory=FfaDef)

    @property
    def total(self) -> int:
        return self.ees.count + self.ev.count + self.iva.count + self.ffa.count


def _draw(rng, bounds, n):
    lo, hi = bounds
    if lo == hi:
        return np.full(n, float(lo))
    return rng.uniform(lo, hi, n)


class EesGroup:
    kind = GesKind.EES

    def __init__(self, d: EesDef, rng):
        n = d.count
        self.n = n
        self.capacity = _draw(rng, d.capacity, n)
        self.power_nom = _draw(rng, d.power, n)
        self.eta_c = np.full(n, d.eta_charge)
        self.eta_d = np.full(n, d.eta_discharge)
        self.e_min = d.soc_bounds[0] * self.capacity
        self.e_max = d.soc_bounds[1] * self.capacity
        self.energy = d.soc_init * self.capacity
        self.committed = np.zeros(n)

    def dos(self):
        return 1.0 - 2.0 * self.energy / self.capacity

    def char_powers(self, horizon_h):
        hold = np.zeros(self.n)
        sat_min = np.minimum(self.eta_d * (self.e_min - self.energy) / horizon_h, hold)
        sat_max = np.maximum((self.e_max - self.energy) / (self.eta_c * horizon_h), hold)
        return hold, sat_min, sat_max, -self.power_nom, self.power_nom

    def step(self, dt_h):
        p = self.committed
        self.energy = self.energy + np.where(p >= 0, self.eta_c * p,
                                             p / self.eta_d) * dt_h


class EvGroup:
    kind = GesKind.EV

    def __init__(self, d: EvDef, rng):
        n = d.count
        self.n = n
        self.capacity = _draw(rng, d.capacity, n)
        self.power_nom = _draw(rng, d.power, n)
        self.eta = np.full(n, d.eta)
        self.t_in = _draw(rng, d.arrive, n)
        self.t_dep = _draw(rng, d.depart, n)       # departure hour of the day
        self.e_in = _draw(rng, d.soc_arrive, n) * self.capacity
        self.e_tar = _draw(rng, d.soc_target, n) * self.capacity
        self.band = (d.deadband_pct / 100.0) * self.capacity
        self.lock_h = d.lockout_min / 60.0
        span = self.t_dep + 24.0 - self.t_in
        self.p_req = (self.e_tar - self.e_in) / (self.eta * span)
        # the day starts mid-way through last evening's session
        self.sess_t_in = self.t_in - 24.0
        self.sess_depart = self.t_dep.copy()
        self.in_session = np.ones(n, dtype=bool)
        self.energy = self.e_in + self.eta * self.p_req * (0.0 - self.sess_t_in)
        self.on = rng.random(n) < (self.p_req / self.power_nom)
        self.lock_until = np.full(n, -np.inf)
        self.committed = self.power_nom * self.on
        self.sessions = []       # (device, depart_t, energy, target, band)

    def expected_energy(self, t):
        return self.e_in + self.eta * self.p_req * (t - self.sess_t_in)

    def dos(self, t):
        return -(self.energy - self.expected_energy(t)) / self.band

    def transitions(self, t, events):
        leave = self.in_session & (t >= self.sess_depart)
        if np.any(leave):
            for i in np.nonzero(leave)[0]:
                self.sessions.append((int(i), float(self.sess_depart[i]),
                                      float(self.energy[i]), float(self.e_tar[i]),
                                      float(self.band[i])))
                events.append((t, "ev", int(i), "depart", float(self.energy[i])))
            self.in_session[leave] = False
            self.on[leave] = False
            self.committed[leave] = 0.0
        arrive = ~self.in_session & (t >= self.t_in) & (self.sess_depart < 1e18)
        if np.any(arrive):
            for i in np.nonzero(arrive)[0]:
                events.append((t, "ev", int(i), "arrive", float(self.e_in[i])))
            self.in_session[arrive] = True
            self.energy[arrive] = self.e_in[arrive]
            self.sess_t_in[arrive] = self.t_in[arrive]
            self.sess_depart[arrive] = np.inf     # departs beyond the day
            self.on[arrive] = False
            self.lock_until[arrive] = -np.inf
            self.committed[arrive] = 0.0

    def on_grid_fraction(self, hours):
        """Fraction of each hour [h, h+1) spent plugged in (vector over devices)."""
        h0 = np.asarray(hours, dtype=float)[:, None]
        h1 = h0 + 1.0
        morning = np.clip(np.minimum(h1, self.t_dep[None, :]) - h0, 0.0, 1.0)
        evening = np.clip(h1 - np.maximum(h0, self.t_in[None, :]), 0.0, 1.0)
        return (morning + evening).T        # (devices, hours)

    def step(self, dt_h):
        self.energy = self.energy + self.eta * self.committed * dt_h


class TclGroup:
    """Shared thermal machinery for both air-conditioner classes."""

    def __init__(self, d, rng, n):
        self.n = n
        self.r_th = _draw(rng, d.r_th, n)
        self.c_th = _draw(rng, d.c_th, n)
        self.t_set = _draw(rng, d.t_set, n)
        self.t_dev = _draw(rng, d.t_dev, n)
        self.a = 1.0 / (self.r_th * self.c_th)
        self.temp = self.t_set.copy()
        self.committed = np.zeros(n)
        self.exc_hi = np.zeros(n)     # worst excursion above the comfort band
        self.exc_lo = np.zeros(n)     # worst excursion below

    def dos(self):
        return (self.temp - self.t_set) / self.t_dev

    def track_comfort(self):
        hi = self.temp - (self.t_set + self.t_dev)
        lo = (self.t_set - self.t_dev) - self.temp
        np.maximum(self.exc_hi, hi, out=self.exc_hi)
        np.maximum(self.exc_lo, lo, out=self.exc_lo)

    def thermal_step(self, heat, dt_h, t_out):
        alpha = getattr(self, "_alpha_cache", None)
        if alpha is None or self._alpha_dt != dt_h:
            self._alpha_cache = np.exp(-self.a * dt_h)
            self._alpha_dt = dt_h
            alpha = self._alpha_cache
        self.temp = tcl_step(self.temp, t_out, heat, alpha, self.r_th)
        self.track_comfort()


class IvaGroup(TclGroup):
    kind = GesKind.IVA

    def __init__(self, d: IvaDef, rng):
        super().__init__(d, rng, d.count)
        n = d.count
        self.p_min = _draw(rng, d.p_min, n)
        self.p_max = _draw(rng, d.p_max, n)
        self.p1, self.p2 = d.p1, d.p2
        self.q1, self.q2 = d.q1, d.q2
        self.response_s = d.response_s

    def initialize(self, t_out0):
        hold = iva_electric_power((t_out0 - self.t_set) / self.r_th,
                                  self.p1, self.p2, self.q1, self.q2)
        self.committed = np.clip(hold, self.p_min, self.p_max)

    def char_powers(self, t_out, horizon_h):
        decay = np.exp(-self.a * horizon_h)

        def reach(target):
            heat = ((target - t_out) - (self.temp - t_out) * decay) \
                   / (self.r_th * (decay - 1.0))
            return iva_electric_power(heat, self.p1, self.p2, self.q1, self.q2)

        hold = reach(self.temp)
        sat_min = np.minimum(reach(self.t_set + self.t_dev), hold)
        sat_max = np.maximum(reach(self.t_set - self.t_dev), hold)
        return hold, sat_min, sat_max, self.p_min, self.p_max

    def step(self, dt_h, t_out):
        heat = iva_heat_rate(self.committed, self.p1, self.p2, self.q1, self.q2)
        self.thermal_step(heat, dt_h, t_out)


class FfaGroup(TclGroup):
    kind = GesKind.FFA

    def __init__(self, d: FfaDef, rng):
        super().__init__(d, rng, d.count)
        n = d.count
        self.power_nom = _draw(rng, d.power, n)
        self.cop = _draw(rng, d.cop, n)
        self.lock_h = d.lockout_min / 60.0
        self.on = np.zeros(n, dtype=bool)
        self.lock_until = np.full(n, -np.inf)

    def initialize(self, t_out0, rng):
        duty = np.clip((t_out0 - self.t_set) / (self.r_th * self.cop * self.power_nom),
                       0.0, 1.0)
        self.on = rng.random(self.n) < duty
        self.committed = self.power_nom * self.on

    def step(self, dt_h, t_out):
        self.thermal_step(self.cop * self.committed, dt_h, t_out)


class Fleet:
    """All four device populations plus the per-cycle market machinery."""

    def __init__(self, definition: FleetDef, seed: int,
                 control_period_s: float = 10.0,
                 sat_horizon_h: float = 5.0 / 60.0):
        self.definition = definition
        self.rng = np.random.default_rng(seed)
        self.control_period_h = control_period_s / 3600.0
        self.sat_horizon_h = sat_horizon_h
        self.ees = EesGroup(definition.ees, self.rng)
        self.ev = EvGroup(definition.ev, self.rng)
        self.iva = IvaGroup(definition.iva, self.rng)
        self.ffa = FfaGroup(definition.ffa, self.rng)
        self.iva_ratio = max(1, int(round(definition.iva.response_s / control_period_s)))
        self.iva_offset = np.arange(self.iva.n) % self.iva_ratio
        self._bid = None

    # -- lifecycle ---------------------------------------------------------

    def initialize(self, t_out0: float):
        self.iva.initialize(t_out0)
        self.ffa.initialize(t_out0, self.rng)

    def transitions(self, t: float, events: list):
        self.ev.transitions(t, events)

    # -- market cycle ------------------------------------------------------

    def bid(self, cycle: int, t: float, t_out: float) -> BidSet:
        """Assemble the cycle's bids; remembers the context for respond()."""
        ees, ev, iva, ffa = self.ees, self.ev, self.iva, self.ffa

        iva_resp = (cycle % self.iva_ratio) == self.iva_offset
        e_hold, e_smin, e_smax, e_omin, e_omax = ees.char_powers(self.sat_horizon_h)
        i_hold, i_smin, i_smax, i_omin, i_omax = iva.char_powers(t_out, self.sat_horizon_h)
        cp = dict(
            s=np.concatenate([ees.dos(), iva.dos()[iva_resp]]),
            hold=np.concatenate([e_hold, i_hold[iva_resp]]),
            sat_min=np.concatenate([e_smin, i_smin[iva_resp]]),
            sat_max=np.concatenate([e_smax, i_smax[iva_resp]]),
            op_min=np.concatenate([e_omin, i_omin[iva_resp]]),
            op_max=np.concatenate([e_omax, i_omax[iva_resp]]),
        )

        ev_active = ev.in_session
        ev_unlocked = ev_active & (t >= ev.lock_until)
        ffa_unlocked = t >= ffa.lock_until
        ev_s = ev.dos(t)
        ffa_s = ffa.dos()
        ev_thr = np.where(ev.on, (ev_s + 1.0) / 2.0, (ev_s - 1.0) / 2.0)
        ffa_thr = np.where(ffa.on, (ffa_s + 1.0) / 2.0, (ffa_s - 1.0) / 2.0)

        flat = (float(iva.committed[~iva_resp].sum())
                + float(ev.committed[ev_active & ~ev_unlocked].sum())
                + float(ffa.committed[~ffa_unlocked].sum()))

        bids = BidSet(
            flat_total=flat,
            step_threshold=np.concatenate([ev_thr[ev_unlocked], ffa_thr[ffa_unlocked]]),
            step_p_on=np.concatenate([ev.power_nom[ev_unlocked],
                                      ffa.power_nom[ffa_unlocked]]),
            cp_s=cp["s"], cp_hold=cp["hold"], cp_sat_min=cp["sat_min"],
            cp_sat_max=cp["sat_max"], cp_op_min=cp["op_min"], cp_op_max=cp["op_max"],
        )
        self._bid = dict(cycle=cycle, cp=cp, iva_resp=iva_resp,
                         ev_unlocked=ev_unlocked, ffa_unlocked=ffa_unlocked,
                         ev_s=ev_s, ffa_s=ffa_s, ev_thr=ev_thr,
                         ffa_thr=ffa_thr, t_out=t_out)
        return bids

    def respond(self, price: float, t: float, events: list):
        """Commit every device's reaction to the broadcast price."""
        ctx = self._bid
        ees, ev, iva, ffa = self.ees, self.ev, self.iva, self.ffa
        cp = ctx["cp"]
        cp_power = cp_curve_eval(price, cp["s"], cp["hold"], cp["sat_min"],
                                 cp["sat_max"], cp["op_min"], cp["op_max"])
        n_ees = ees.n
        ees.committed = cp_power[:n_ees]
        iva.committed[ctx["iva_resp"]] = cp_power[n_ees:]

        # one-step look-ahead of S if the present state is kept, so the
        # comfort override fires before the band is crossed
        dt = self.control_period_h
        ev_stay = ctx["ev_s"] + np.where(
            ev.on, -ev.eta * (ev.power_nom - ev.p_req) * dt / ev.band,
            ev.eta * ev.p_req * dt / ev.band)
        alpha = np.exp(-ffa.a * dt)
        t_stay = tcl_step(ffa.temp, ctx["t_out"],
                          ffa.cop * ffa.power_nom * ffa.on, alpha, ffa.r_th)
        ffa_stay = (t_stay - ffa.t_set) / ffa.t_dev

        self._dp_respond(ev, ctx["ev_unlocked"], ev_stay, ctx["ev_thr"],
                         price, t, "ev", events, ev.lock_h)
        ev.committed = np.where(ev.in_session & ev.on, ev.power_nom, 0.0)
        self._dp_respond(ffa, ctx["ffa_unlocked"], ffa_stay, ctx["ffa_thr"],
                         price, t, "ffa", events, ffa.lock_h)
        ffa.committed = np.where(ffa.on, ffa.power_nom, 0.0)

    @staticmethod
    def _dp_respond(group, unlocked, s_stay, thr, price, t, kind_name, events,
                    lock_h):
        want_on = price <= thr
        want_on = np.where(s_stay >= 1.0, True, want_on)
        want_on = np.where(s_stay <= -1.0, False, want_on)
        switch = unlocked & (want_on != group.on)
        if np.any(switch):
            comfort = (s_stay >= 1.0) | (s_stay <= -1.0)
            for i in np.nonzero(switch)[0]:
                code = "on" if want_on[i] else "off"
                if comfort[i]:
                    code = "comfort_" + code
                events.append((t, kind_name, int(i), code, float(s_stay[i])))
            group.on = np.where(switch, want_on, group.on)
            group.lock_until = np.where(switch, t + lock_h, group.lock_until)

    def step(self, t: float, t_out: float):
        dt = self.control_period_h
        self.ees.step(dt)
        self.ev.step(dt)
        self.iva.step(dt, t_out)
        self.ffa.step(dt, t_out)

    # -- observations ------------------------------------------------------

    def total_power(self) -> float:
        return (float(self.ees.committed.sum()) + float(self.ev.committed.sum())
                + float(self.iva.committed.sum()) + float(self.ffa.committed.sum()))

    def kind_powers(self) -> dict:
        return {"ees": float(self.ees.committed.sum()),
                "ev": float(self.ev.committed.sum()),
                "iva": float(self.iva.committed.sum()),
                "ffa": float(self.ffa.committed.sum())}

    def dos_snapshot(self, t: float) -> dict:
        snap = {"ees": self.ees.dos(), "iva": self.iva.dos(),
                "ffa": self.ffa.dos()}
        active = self.ev.in_session
        snap["ev"] = self.ev.dos(t)[active]
        return snap

    def contract_check(self):
        """Cheap invariant audit; violations are bugs, not scenario events."""
        ees, ev, iva, ffa = self.ees, self.ev, self.iva, self.ffa
        assert np.all(np.abs(ees.committed) <= ees.power_nom * (1 + 1e-9))
        assert np.all((iva.committed >= iva.p_min - 1e-9)
                      & (iva.committed <= iva.p_max + 1e-9))
        ok_ev = (ev.committed == 0.0) | np.isclose(ev.committed, ev.power_nom)
        ok_ffa = (ffa.committed == 0.0) | np.isclose(ffa.committed, ffa.power_nom)
        assert np.all(ok_ev) and np.all(ok_ffa)

    # -- hourly model inputs -------------------------------------------------

    def hourly_model_inputs(self, hours, t_out_hourly, t_now: float):
        """Per-device coefficient tables over the horizon for the fleet model.

        Returns (g_next, g_now, base, member) arrays shaped (devices, hours)
        plus per-device power limits and the current mean state.
        """
        hours = np.asarray(hours, dtype=int)
        H = hours.size
        t_out_hourly = np.asarray(t_out_hourly, dtype=float)
        ees, ev, iva, ffa = self.ees, self.ev, self.iva, self.ffa

        k_ees = ees.capacity / 2.0
        k_ev = ev.band / ev.eta
        alpha_i = np.exp(-iva.a)
        beta_i = iva.q1 * iva.r_th / iva.p1
        gamma_i = iva.r_th * (iva.p2 * iva.q1 - iva.p1 * iva.q2) / iva.p1
        k_iva = iva.t_dev / (beta_i * (1.0 - alpha_i))
        alpha_f = np.exp(-ffa.a)
        beta_f = ffa.r_th * ffa.cop
        k_ffa = ffa.t_dev / (beta_f * (1.0 - alpha_f))

        ones = np.ones(H)
        g_next = np.concatenate([
            -k_ees[:, None] * ones, -k_ev[:, None] * ones,
            -k_iva[:, None] * ones, -k_ffa[:, None] * ones])
        g_now = np.concatenate([
            k_ees[:, None] * ones, k_ev[:, None] * ones,
            (alpha_i * k_iva)[:, None] * ones, (alpha_f * k_ffa)[:, None] * ones])
        base = np.concatenate([
            np.zeros((ees.n, H)), ev.p_req[:, None] * ones,
            (t_out_hourly[None, :] - iva.t_set[:, None] + gamma_i[:, None]) / beta_i[:, None],
            (t_out_hourly[None, :] - ffa.t_set[:, None]) / beta_f[:, None]])

        member = np.ones((self.size, H))
        frac = self.ev.on_grid_fraction(hours)
        member[ees.n:ees.n + ev.n] = (frac >= 0.5).astype(float)

        p_min_dev = np.concatenate([-ees.power_nom, np.zeros(ev.n),
                                    iva.p_min, np.zeros(ffa.n)])
        p_max_dev = np.concatenate([ees.power_nom, ev.power_nom,
                                    iva.p_max, ffa.power_nom])
        snap = self.dos_snapshot(t_now)
        all_dos = np.concatenate([snap["ees"], snap["ev"], snap["iva"], snap["ffa"]])
        s_init = float(all_dos.mean()) if all_dos.size else 0.0
        return g_next, g_now, base, member, p_min_dev, p_max_dev, s_init

    @property
    def size(self) -> int:
        return self.ees.n + self.ev.n + self.iva.n + self.ffa.n


def sample_fleet(definition: FleetDef, seed: int, **kw) -> Fleet:
    """Draw a fleet from its parameter distributions, deterministically."""
    for group in (definition.ees, definition.ev, definition.iva, definition.ffa):
        for name, value in vars(group).items():
            if isinstance(value, tuple) and len(value) == 2 and value[0] > value[1]:
                raise ValueError(f"{type(group).__name__}.{name}: bad bounds {value}")
    return Fleet(definition, seed, **kw)
