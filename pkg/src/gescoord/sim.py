"""Scenario engine: hourly rolling optimization over a fast market loop.

Each control cycle (10 s by default) the engine updates the environment,
collects bids (dwell-time locks and slow response cycles filter to flat
bids), clears the virtual market at the current target, broadcasts the
price, lets devices respond, advances the plant physics, and logs.  At every
hour boundary the fleet model is refreshed from device state and the rolling
program re-solved; only its first hour is dispatched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import market
from .aggregate import build_model
from .fleet import Fleet, FleetDef, sample_fleet
from .metrics import cost_report, mileage, performance_score
from .optimizer import (
    MarketPrices,
    Schedule,
    solve_baseline,
    solve_dual_market,
    solve_energy_only,
)
from .signals import RegDSignal, TimeSeries

MODES = ("baseline", "energy_only", "dual_market")


@dataclass
class Scenario:
    fleet: FleetDef
    prices: MarketPrices
    temperature: TimeSeries
    regd: RegDSignal | None = None
    seed: int = 42
    mode: str = "dual_market"
    duration_h: float = 24.0
    control_period_s: float = 10.0
    sat_horizon_min: float = 5.0
    name: str = "scenario"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "dual_market" and self.regd is None:
            raise ValueError("dual_market mode needs a regulation signal")


@dataclass
class RunLog:
    period_s: float
    time_h: np.ndarray
    p_tar: np.ndarray
    price: np.ndarray
    p_agg: np.ndarray
    saturated: np.ndarray
    kind_power: dict
    kind_dos: dict
    n_ev_active: np.ndarray
    hour: np.ndarray
    p_sch: np.ndarray
    c_reg: np.ndarray
    p_limits: np.ndarray          # (hours, 2)
    s_hat: np.ndarray
    s_pred: np.ndarray
    s_real_end: np.ndarray
    objective: np.ndarray
    kkt_max: np.ndarray
    events: list
    traces: dict
    ev_sessions: list
    comfort_excess: dict          # kind -> worst excursion per device, degC

    def tracking_rms(self) -> float:
        """RMS of |P_agg - P_tar| scaled by each hour's fleet power range."""
        per_hour = int(round(3600.0 / self.period_s))
        hours = (np.arange(self.p_tar.size) // per_hour).clip(0, self.hour.size - 1)
        span = (self.p_limits[:, 1] - self.p_limits[:, 0])[hours]
        err = (self.p_agg - self.p_tar) / np.maximum(span, 1e-9)
        return float(np.sqrt(np.mean(err * err)))


@dataclass
class RunResult:
    scenario: Scenario
    log: RunLog
    schedules: list
    cost: object
    scores: list
    mileages: np.ndarray
    summary: dict


def _solve_for_mode(mode, model, prices) -> Schedule:
    if mode == "baseline":
        return solve_baseline(model)
    if mode == "energy_only":
        return solve_energy_only(model, prices)
    return solve_dual_market(model, prices)


def run(scenario: Scenario) -> RunResult:
    per_hour = int(round(3600.0 / scenario.control_period_s))
    n_cycles = int(round(scenario.duration_h * per_hour))
    n_hours = max(1, math.ceil(scenario.duration_h - 1e-9))
    end_hour = min(24, n_hours)
    dt_h = scenario.control_period_s / 3600.0

    fleet = sample_fleet(scenario.fleet, scenario.seed,
                         control_period_s=scenario.control_period_s,
                         sat_horizon_h=scenario.sat_horizon_min / 60.0)
    times = np.arange(n_cycles) * dt_h
    t_out_cycle = scenario.temperature.at(times)
    if scenario.mode == "dual_market":
        regd_cycle = np.asarray(scenario.regd.series.at(times), dtype=float)
    else:
        regd_cycle = np.zeros(n_cycles)
    fleet.initialize(float(t_out_cycle[0]))

    log = RunLog(
        period_s=scenario.control_period_s,
        time_h=times,
        p_tar=np.zeros(n_cycles), price=np.zeros(n_cycles),
        p_agg=np.zeros(n_cycles), saturated=np.zeros(n_cycles, dtype=bool),
        kind_power={k: np.zeros(n_cycles) for k in ("ees", "ev", "iva", "ffa")},
        kind_dos={k: np.zeros(n_cycles) for k in ("ees", "ev", "iva", "ffa")},
        n_ev_active=np.zeros(n_cycles, dtype=int),
        hour=np.arange(end_hour),
        p_sch=np.zeros(end_hour), c_reg=np.zeros(end_hour),
        p_limits=np.zeros((end_hour, 2)),
        s_hat=np.zeros(end_hour), s_pred=np.zeros(end_hour),
        s_real_end=np.zeros(end_hour),
        objective=np.zeros(end_hour), kkt_max=np.zeros(end_hour),
        events=[], traces=_init_traces(fleet, n_cycles), ev_sessions=[],
        comfort_excess={},
    )
    schedules: list[Schedule] = []
    p_sch_now = c_reg_now = 0.0

    for c in range(n_cycles):
        t = float(times[c])
        t_out = float(t_out_cycle[c])
        fleet.transitions(t, log.events)

        if c % per_hour == 0:
            hour = c // per_hour
            if hour > 0:
                log.s_real_end[hour - 1] = _fleet_mean_dos(fleet, t)
            horizon = np.arange(hour, end_hour)
            t_fc = scenario.temperature.at(horizon + 0.5)
            inputs = fleet.hourly_model_inputs(horizon, np.atleast_1d(t_fc), t)
            model = build_model(hour, *inputs[:3], inputs[3], inputs[4],
                                inputs[5], inputs[6])
            sched = _solve_for_mode(scenario.mode, model, scenario.prices)
            schedules.append(sched)
            p_sch_now = float(sched.p_sch[0])
            c_reg_now = float(sched.c_reg[0])
            log.p_sch[hour] = p_sch_now
            log.c_reg[hour] = c_reg_now
            log.p_limits[hour] = (model.p_min[0], model.p_max[0])
            log.s_hat[hour] = model.s_init
            log.s_pred[hour] = float(sched.s_traj[1])
            log.objective[hour] = sched.objective
            log.kkt_max[hour] = max(sched.kkt.values())

        p_tar = p_sch_now + regd_cycle[c] * c_reg_now
        bids = fleet.bid(c, t, t_out)
        agg = market.aggregate_bids(bids)
        res = market.clear(agg, p_tar)
        price = market.quantize_price(res.price)
        fleet.respond(price, t, log.events)
        fleet.step(t, t_out)
        fleet.contract_check()

        log.p_tar[c] = p_tar
        log.price[c] = price
        log.saturated[c] = res.saturated
        log.p_agg[c] = fleet.total_power()
        for k, v in fleet.kind_powers().items():
            log.kind_power[k][c] = v
        snap = fleet.dos_snapshot(t + dt_h)
        for k in ("ees", "ev", "iva", "ffa"):
            vals = snap[k]
            log.kind_dos[k][c] = float(vals.mean()) if vals.size else np.nan
        log.n_ev_active[c] = int(fleet.ev.in_session.sum())
        _record_traces(log.traces, fleet, c, t + dt_h)

    log.s_real_end[end_hour - 1] = _fleet_mean_dos(fleet, float(n_cycles) * dt_h)
    log.ev_sessions = list(fleet.ev.sessions)
    log.comfort_excess = {"iva": fleet.iva.exc_hi.copy(),
                          "iva_low": fleet.iva.exc_lo.copy(),
                          "ffa": fleet.ffa.exc_hi.copy(),
                          "ffa_low": fleet.ffa.exc_lo.copy()}

    target_ts = TimeSeries(0.0, scenario.control_period_s, log.p_tar)
    response_ts = TimeSeries(0.0, scenario.control_period_s, log.p_agg)
    regd_ts = TimeSeries(0.0, scenario.control_period_s, regd_cycle)
    scores = [performance_score(target_ts, response_ts, h) for h in range(end_hour)]
    mileages = np.array([mileage(regd_ts, h) for h in range(end_hour)])
    if scenario.mode == "dual_market":
        cost = cost_report(log.p_sch, log.c_reg, 0, scenario.prices,
                           scores=[s.composite for s in scores], mileages=mileages)
    else:
        cost = cost_report(log.p_sch, log.c_reg, 0, scenario.prices)

    summary = _summarize(scenario, log, cost, scores, mileages)
    return RunResult(scenario, log, schedules, cost, scores, mileages, summary)


def _fleet_mean_dos(fleet: Fleet, t: float) -> float:
    snap = fleet.dos_snapshot(t)
    vals = np.concatenate([snap["ees"], snap["ev"], snap["iva"], snap["ffa"]])
    return float(vals.mean()) if vals.size else 0.0


def _init_traces(fleet: Fleet, n_cycles: int) -> dict:
    traces = {}
    for kind, group in (("ees", fleet.ees), ("ev", fleet.ev),
                        ("iva", fleet.iva), ("ffa", fleet.ffa)):
        if group.n == 0:
            continue
        traces[kind] = {"power": np.zeros(n_cycles), "state": np.zeros(n_cycles)}
        if kind == "ev":
            traces[kind]["expected"] = np.zeros(n_cycles)
            traces[kind]["band"] = float(fleet.ev.band[0])
            traces[kind]["active"] = np.zeros(n_cycles, dtype=bool)
    return traces


def _record_traces(traces: dict, fleet: Fleet, c: int, t: float):
    if "ees" in traces:
        traces["ees"]["power"][c] = fleet.ees.committed[0]
        traces["ees"]["state"][c] = fleet.ees.energy[0]
    if "ev" in traces:
        traces["ev"]["power"][c] = fleet.ev.committed[0]
        traces["ev"]["state"][c] = fleet.ev.energy[0]
        traces["ev"]["expected"][c] = fleet.ev.expected_energy(t)[0]
        traces["ev"]["active"][c] = fleet.ev.in_session[0]
    if "iva" in traces:
        traces["iva"]["power"][c] = fleet.iva.committed[0]
        traces["iva"]["state"][c] = fleet.iva.temp[0]
    if "ffa" in traces:
        traces["ffa"]["power"][c] = fleet.ffa.committed[0]
        traces["ffa"]["state"][c] = fleet.ffa.temp[0]


def ev_final_energy_check(log: RunLog) -> list:
    """Per completed charging session: did the energy land inside the band?"""
    verdicts = []
    for device, dep_t, energy, target, band in log.ev_sessions:
        gap = abs(energy - target)
        verdicts.append({"device": device, "depart_h": dep_t, "energy": energy,
                         "target": target, "band": band,
                         "ok": bool(gap <= band + 1e-9)})
    return verdicts


def scan_lockout_violations(log: RunLog, lock_ev_h: float, lock_ffa_h: float) -> list:
    """Event-log audit: no two-state device may switch inside its dwell time."""
    last = {}
    bad = []
    for (t, kind, idx, code, _val) in log.events:
        if code.endswith("on") or code.endswith("off"):
            key = (kind, idx)
            lock = lock_ev_h if kind == "ev" else lock_ffa_h
            if key in last and t - last[key] < lock - 1e-9:
                bad.append((key, last[key], t))
            last[key] = t
    return bad


def comfort_violations(log: RunLog, tolerance_c: float = 0.1) -> int:
    """Number of conditioned spaces that ever left the comfort band."""
    count = 0
    for arr in log.comfort_excess.values():
        count += int(np.sum(arr > tolerance_c))
    return count


def hold_price(fleet: Fleet, price: float, duration_h: float, t_out,
               start_t: float = 0.0):
    """Drive a fleet at a fixed broadcast price (no market), for diagnostics.

    ``t_out`` may be a constant or a :class:`TimeSeries`.
    """
    per_hour = int(round(1.0 / fleet.control_period_h))
    n = int(round(duration_h * per_hour))
    events: list = []
    for c in range(n):
        t = start_t + c * fleet.control_period_h
        ot = float(t_out.at(t)) if hasattr(t_out, "at") else float(t_out)
        fleet.transitions(t, events)
        fleet.bid(c, t, ot)
        fleet.respond(price, t, events)
        fleet.step(t, ot)
    return events


def _summarize(scenario, log: RunLog, cost, scores, mileages) -> dict:
    comps = np.array([s.composite for s in scores]) if scores else np.zeros(0)
    verdicts = ev_final_energy_check(log)
    lock_bad = scan_lockout_violations(log, scenario.fleet.ev.lockout_min / 60.0,
                                       scenario.fleet.ffa.lockout_min / 60.0)
    return {
        "name": scenario.name,
        "mode": scenario.mode,
        "seed": scenario.seed,
        "duration_h": scenario.duration_h,
        "control_period_s": scenario.control_period_s,
        "devices": scenario.fleet.total,
        "energy_bill_usd": cost.bill_total,
        "capacity_revenue_usd": float(cost.capacity_revenue.sum()),
        "mileage_revenue_usd": float(cost.mileage_revenue.sum()),
        "regulation_revenue_usd": cost.regulation_total,
        "regulation_revenue_expost_usd": cost.regulation_total_expost,
        "total_cost_usd": cost.total_cost,
        "total_cost_expost_usd": cost.total_cost_expost,
        "tracking_rms_frac": log.tracking_rms(),
        "score_mean": float(comps.mean()) if comps.size else None,
        "score_min": float(comps.min()) if comps.size else None,
        "score_frac_ge_090": float(np.mean(comps >= 0.90)) if comps.size else None,
        "mileage_mean": float(mileages.mean()) if mileages.size else None,
        "ev_sessions_completed": len(verdicts),
        "ev_deadband_violations": sum(1 for v in verdicts if not v["ok"]),
        "comfort_violations": comfort_violations(log),
        "lockout_violations": len(lock_bad),
        "price_saturated_cycles": int(log.saturated.sum()),
    }
