"""Virtual-price market: demand curves, exact aggregation, and clearing.

Curves map a dimensionless price in [-1, 1] to power (kW) and are
non-increasing.  A curve is stored as a breakpoint list in descending price
order; a discontinuity is two breakpoints at the same price, and evaluation
at a step returns the higher-power side (a step at S' means "draw P_ON for
every price <= S'").

Aggregation merges breakpoints, so the fleet curve is the exact pointwise
sum - no sampling.  Clearing inverts the fleet curve at the target power:
exact on linear segments, the step location inside a discontinuity gap, and
the midpoint of a flat stretch when many prices clear equally well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PRICE_QUANTUM = 1e-9


def quantize_price(price: float) -> float:
    """Floor-quantize a clearing price for broadcast.

    Flooring keeps the broadcast price at or below the exact one, so a
    two-state device whose step sits exactly at the clearing price still
    sees itself on the drawing side.
    """
    return max(-1.0, math.floor(price * 1e9) / 1e9)


def _eval_knots(lam, p_hi, p_at, price):
    """Evaluate a breakpoint list at ``price`` (scalar or array)."""
    price = np.asarray(price, dtype=float)
    # last index whose breakpoint price >= query
    pos = np.searchsorted(-lam, -price, side="right") - 1
    pos = np.clip(pos, 0, lam.size - 1)
    hit = lam[pos] == price
    nxt = np.minimum(pos + 1, lam.size - 1)
    den = lam[nxt] - lam[pos]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(den != 0.0, (price - lam[pos]) / den, 0.0)
    interp = p_at[pos] + frac * (p_hi[nxt] - p_at[pos])
    out = np.where(hit, p_at[pos], interp)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DemandCurve:
    """One device's bid: non-increasing power over the price range [-1, 1]."""

    lam: np.ndarray    # breakpoint prices, descending, lam[0]=1, lam[-1]=-1
    p_at: np.ndarray   # power at the breakpoint (high side of any step)
    p_hi: np.ndarray   # power approaching the breakpoint from above

    @classmethod
    def flat(cls, power: float) -> "DemandCurve":
        p = np.array([power, power], dtype=float)
        return cls(np.array([1.0, -1.0]), p, p.copy())

    @classmethod
    def step(cls, threshold: float, p_on: float) -> "DemandCurve":
        """Draw ``p_on`` for prices <= ``threshold``, nothing above it."""
        if threshold >= 1.0:
            return cls.flat(p_on)
        if threshold < -1.0:
            return cls.flat(0.0)
        lam = np.array([1.0, threshold, -1.0])
        p_at = np.array([0.0, p_on, p_on])
        p_hi = np.array([0.0, 0.0, p_on])
        return cls(lam, p_at, p_hi)

    @classmethod
    def piecewise(cls, lam, values) -> "DemandCurve":
        """Continuous piecewise-linear curve from descending breakpoints."""
        lam = np.asarray(lam, dtype=float)
        values = np.asarray(values, dtype=float)
        return cls(lam, values, values.copy())

    def evaluate(self, price: float) -> float:
        if not -1.0 <= price <= 1.0:
            raise ValueError(f"price {price} outside [-1, 1]")
        return _eval_knots(self.lam, self.p_hi, self.p_at, price)

    def _eval_at(self, prices):
        return _eval_knots(self.lam, self.p_hi, self.p_at, prices)

    def _eval_above(self, prices):
        """Limit of the curve as the price decreases onto ``prices``."""
        prices = np.asarray(prices, dtype=float)
        pos = np.searchsorted(-self.lam, -prices, side="left")
        pos = np.clip(pos, 0, self.lam.size - 1)
        prev = np.maximum(pos - 1, 0)
        den = self.lam[pos] - self.lam[prev]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(den != 0.0, (prices - self.lam[prev]) / den, 1.0)
        interp = self.p_at[prev] + frac * (self.p_hi[pos] - self.p_at[prev])
        exact = self.lam[pos] == prices
        return np.where(exact & (pos > 0) | (prices >= 1.0),
                        self.p_hi[np.where(prices >= 1.0, 0, pos)], interp)


@dataclass(frozen=True)
class BidSet:
    """Vector form of one cycle's bids, grouped by curve shape."""

    flat_total: float               # sum of all locked/flat bids
    step_threshold: np.ndarray      # step curves: switch price per device
    step_p_on: np.ndarray           # step curves: drawing power per device
    cp_s: np.ndarray                # continuous curves: anchor state
    cp_hold: np.ndarray
    cp_sat_min: np.ndarray
    cp_sat_max: np.ndarray
    cp_op_min: np.ndarray
    cp_op_max: np.ndarray

    @classmethod
    def empty(cls) -> "BidSet":
        z = np.empty(0)
        return cls(0.0, z, z, z, z, z, z, z, z)


@dataclass(frozen=True)
class AggregateCurve:
    """Exact pointwise sum of submitted curves on the merged breakpoint grid."""

    lam: np.ndarray
    p_at: np.ndarray
    p_hi: np.ndarray

    @property
    def power_min(self) -> float:
        """Fleet power when the price saturates high: D(1)."""
        return float(self.p_at[0])

    @property
    def power_max(self) -> float:
        """Fleet power when the price saturates low: D(-1)."""
        return float(self.p_at[-1])

    def evaluate(self, price: float) -> float:
        if not -1.0 <= price <= 1.0:
            raise ValueError(f"price {price} outside [-1, 1]")
        return _eval_knots(self.lam, self.p_hi, self.p_at, price)


@dataclass(frozen=True)
class ClearingResult:
    price: float
    cleared: float
    target: float
    saturated: bool


def aggregate(curves) -> AggregateCurve:
    """Sum a list of :class:`DemandCurve` over the merged breakpoint grid."""
    if not curves:
        lam = np.array([1.0, -1.0])
        zero = np.zeros(2)
        return AggregateCurve(lam, zero, zero.copy())
    grid = np.unique(np.concatenate([c.lam for c in curves] + [np.array([1.0, -1.0])]))
    grid = grid[(grid >= -1.0) & (grid <= 1.0)][::-1].copy()
    p_at = np.zeros(grid.size)
    p_hi = np.zeros(grid.size)
    for c in curves:
        p_at += c._eval_at(grid)
        p_hi += c._eval_above(grid)
    p_hi[0] = p_at[0]
    return AggregateCurve(grid, p_at, p_hi)


def aggregate_bids(bids: BidSet) -> AggregateCurve:
    """Aggregate a :class:`BidSet` without constructing per-device curves."""
    from .devices import cp_curve_eval, _cp_cross  # kernel reuse, no cycle at import time

    parts = [np.array([1.0, -1.0])]
    if bids.step_threshold.size:
        parts.append(bids.step_threshold)
    if bids.cp_s.size:
        parts.append(np.clip(bids.cp_s, -1.0, 1.0).ravel())
        parts.append(_cp_cross(bids.cp_op_min, bids.cp_s, bids.cp_hold,
                               bids.cp_sat_min, bids.cp_sat_max).ravel())
        parts.append(_cp_cross(bids.cp_op_max, bids.cp_s, bids.cp_hold,
                               bids.cp_sat_min, bids.cp_sat_max).ravel())
    grid = np.unique(np.concatenate(parts))
    grid = grid[(grid >= -1.0) & (grid <= 1.0)][::-1].copy()

    p_at = np.full(grid.size, bids.flat_total)
    p_hi = np.full(grid.size, bids.flat_total)
    if bids.step_threshold.size:
        order = np.argsort(-bids.step_threshold, kind="stable")
        thr = bids.step_threshold[order]
        cum = np.concatenate([[0.0], np.cumsum(bids.step_p_on[order])])
        p_at += cum[np.searchsorted(-thr, -grid, side="right")]
        p_hi += cum[np.searchsorted(-thr, -grid, side="left")]
    if bids.cp_s.size:
        vals = cp_curve_eval(grid[None, :], bids.cp_s[:, None], bids.cp_hold[:, None],
                             bids.cp_sat_min[:, None], bids.cp_sat_max[:, None],
                             bids.cp_op_min[:, None], bids.cp_op_max[:, None])
        cp_sum = vals.sum(axis=0)
        p_at += cp_sum
        p_hi += cp_sum
    p_hi[0] = p_at[0]
    return AggregateCurve(grid, p_at, p_hi)


def clear(agg: AggregateCurve, target: float) -> ClearingResult:
    """Invert the fleet curve at ``target``: the largest price drawing at
    least the target, with midpoint tie-breaking on flat stretches."""
    if math.isnan(target):
        raise ValueError("clearing target is NaN")
    lam, p_at, p_hi = agg.lam, agg.p_at, agg.p_hi
    if target < p_at[0]:
        return ClearingResult(1.0, float(p_at[0]), target, True)
    if target > p_at[-1]:
        return ClearingResult(-1.0, float(p_at[-1]), target, True)

    j = int(np.searchsorted(p_at, target, side="left"))   # first knot with p_at >= target
    if p_at[j] == target:
        # exact hit; report the midpoint of the stretch where D == target
        hi = lam[j]
        j_last = int(np.searchsorted(p_at, target, side="right")) - 1
        if j_last + 1 < lam.size and p_hi[j_last + 1] == target:
            # the segment below the last exact knot stays flat at the target
            lo = lam[j_last + 1]
        else:
            lo = lam[j_last]
        price = 0.5 * (hi + lo) if lo < hi else float(hi)
        return ClearingResult(float(price), float(target), target, False)
    # target lies strictly between p_at[j-1] and p_at[j]
    if target < p_hi[j]:
        price = _segment_cross(lam, p_at, p_hi, j, target)
        return ClearingResult(float(price), float(target), target, False)
    # at or inside the jump at knot j: clear at the step, drawing the high side
    return ClearingResult(float(lam[j]), float(p_at[j]), target, False)


def _segment_cross(lam, p_at, p_hi, j, target):
    """Price on the open segment ending at knot ``j`` where D == target."""
    top_p, bot_p = p_at[j - 1], p_hi[j]
    top_l, bot_l = lam[j - 1], lam[j]
    if bot_p == top_p:
        return float(bot_l)
    return float(top_l + (target - top_p) * (bot_l - top_l) / (bot_p - top_p))


def evaluate(curve_or_agg, price: float) -> float:
    """Exact curve evaluation (high side at any step)."""
    return curve_or_agg.evaluate(price)
