"""Run evaluation: regulation scoring, mileage, cost accounting, dispersion.

The hourly regulation score is the standard three-component composite -
correlation under a scanned delay, the delay itself, and precision - each in
[0, 1], averaged.  It approximates the performance-based settlement used by
fast-regulation markets; the acceptance thresholds are on the composite, not
on any published figure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optimizer import MarketPrices, Schedule
from .signals import TimeSeries

DELAY_SCAN_S = 300.0


@dataclass(frozen=True)
class PerfScore:
    hour: int
    correlation: float
    delay: float
    precision: float

    @property
    def composite(self) -> float:
        return (self.correlation + self.delay + self.precision) / 3.0


@dataclass(frozen=True)
class CostReport:
    """Daily money lines; regulation revenues are reported positive."""

    hours: np.ndarray
    energy_bill: np.ndarray          # $ per hour
    capacity_revenue: np.ndarray
    mileage_revenue: np.ndarray
    capacity_revenue_expost: np.ndarray
    mileage_revenue_expost: np.ndarray

    @property
    def bill_total(self) -> float:
        return float(self.energy_bill.sum())

    @property
    def regulation_total(self) -> float:
        return float(self.capacity_revenue.sum() + self.mileage_revenue.sum())

    @property
    def regulation_total_expost(self) -> float:
        return float(self.capacity_revenue_expost.sum()
                     + self.mileage_revenue_expost.sum())

    @property
    def total_cost(self) -> float:
        return self.bill_total - self.regulation_total

    @property
    def total_cost_expost(self) -> float:
        return self.bill_total - self.regulation_total_expost


def performance_score(target: TimeSeries, response: TimeSeries,
                      hour: int) -> PerfScore:
    """Score one hour of tracking a fast target.

    Correlation scans response delays in [0, 5 min]; the delay component
    rewards the best-correlation delay linearly; precision compares the mean
    tracking error against the target's own mean absolute deviation.
    """
    per_hour = int(round(3600.0 / target.period_s))
    a = hour * per_hour
    b = min((hour + 1) * per_hour, target.values.size)
    tgt = target.values[a:b]
    scan = int(round(DELAY_SCAN_S / response.period_s))

    tdev = tgt - tgt.mean()
    tgt_mad = np.abs(tdev).mean()
    if tgt_mad < 1e-12:
        rsp = response.values[a:b]
        flat_equal = (np.abs(rsp - tgt).max() < 1e-9) if rsp.size else False
        corr, best_delay = (1.0, 0) if flat_equal else (0.0, 0)
    else:
        corr, best_delay = -1.0, 0
        for d in range(scan + 1):
            rsp = response.values[a + d:b + d]
            m = min(tgt.size, rsp.size)
            if m < 2:
                break
            r = rsp[:m] - rsp[:m].mean()
            t = tgt[:m] - tgt[:m].mean()
            denom = np.sqrt((r * r).sum() * (t * t).sum())
            c = float((r * t).sum() / denom) if denom > 1e-12 else 0.0
            if c > corr + 1e-12:
                corr, best_delay = c, d
        corr = min(max(corr, 0.0), 1.0)

    delay_score = 1.0 - best_delay / max(scan, 1)
    rsp0 = response.values[a:b]
    m = min(tgt.size, rsp0.size)
    if tgt_mad < 1e-12:
        precision = 1.0 if corr == 1.0 else 0.0
    else:
        err = np.abs(rsp0[:m] - tgt[:m]).mean()
        precision = max(0.0, 1.0 - err / tgt_mad)
    return PerfScore(hour, float(corr), float(delay_score), float(min(precision, 1.0)))


def mileage(regd: TimeSeries, hour: int) -> float:
    """Total variation of the regulation signal over one hour."""
    per_hour = int(round(3600.0 / regd.period_s))
    a = hour * per_hour
    b = min((hour + 1) * per_hour + 1, regd.values.size)
    if b - a < 2:
        return 0.0
    return float(np.abs(np.diff(regd.values[a:b])).sum())


def cost_report(p_sch, c_reg, start_hour: int, prices: MarketPrices,
                scores=None, mileages=None) -> CostReport:
    """Money lines of a realized schedule.

    The headline (ex-ante) regulation revenues use the market's statistical
    score and mileage, matching the optimizer's objective; when realized
    hourly scores and mileages are supplied, ex-post lines are added.
    """
    p_sch = np.asarray(p_sch, dtype=float)
    c_reg = np.asarray(c_reg, dtype=float)
    hours = start_hour + np.arange(p_sch.size)
    mu_e = prices.energy[hours]
    mu_c = prices.capacity[hours]
    mu_m = prices.mileage[hours]
    bill = mu_e * p_sch
    cap = prices.score_estimate * mu_c * c_reg
    mil = prices.score_estimate * mu_m * prices.mileage_estimate * c_reg
    if scores is not None and mileages is not None:
        w = np.asarray(scores, dtype=float)
        ml = np.asarray(mileages, dtype=float)
        cap_post = w * mu_c * c_reg
        mil_post = w * mu_m * ml * c_reg
    else:
        cap_post = cap.copy()
        mil_post = mil.copy()
    return CostReport(hours, bill, cap, mil, cap_post, mil_post)


def change_rate(case: float, reference: float) -> float:
    """Relative change against a reference case, as the comparison tables use."""
    if reference == 0.0:
        return float("nan")
    return (case - reference) / abs(reference)


def verify_objective_consistency(schedule: Schedule, prices: MarketPrices,
                                 limits=None) -> float:
    """Relative gap between the schedule's objective and its re-priced terms."""
    rep = cost_report(schedule.p_sch, schedule.c_reg, schedule.start_hour, prices)
    pen = schedule.terms.get("penalty", 0.0)
    rebuilt = rep.bill_total - rep.regulation_total + pen
    scale = max(1.0, abs(schedule.objective))
    return abs(rebuilt - schedule.objective) / scale


@dataclass(frozen=True)
class Dispersion:
    max_dev_continuous: float
    mean_dev_continuous: float
    mean_by_kind: dict


def dos_dispersion(snapshot: dict, price: float) -> Dispersion:
    """How far the fleet's states sit from the broadcast price.

    ``snapshot`` maps kind name to the vector of member states (two-state
    kinds are judged by their cluster mean, continuous kinds individually).
    """
    cont = []
    means = {}
    for kind, vals in snapshot.items():
        vals = np.asarray(vals, dtype=float)
        if vals.size == 0:
            continue
        means[kind] = float(vals.mean())
        if kind in ("ees", "iva"):
            cont.append(np.abs(vals - price))
    if cont:
        alldev = np.concatenate(cont)
        max_dev, mean_dev = float(alldev.max()), float(alldev.mean())
    else:
        max_dev = mean_dev = 0.0
    return Dispersion(max_dev, mean_dev, means)
