"""Reduced-order fleet model: one state, three coefficients per hour.

Because coordination drives every device's flexibility state toward the same
broadcast price, the whole fleet behaves like a single storage whose one-step
power model is just the coefficient sum of its members.  Continuous devices
sum directly; two-state devices are grouped by (rounded) coefficients and each
group contributes count * coefficients, which collapses to the same sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import UnifiedCoeffs

GROUP_SIG_DIGITS = 6


@dataclass(frozen=True)
class AggregateModel:
    """Hourly fleet power model P_k = G1[k] S_{k+1} + G2[k] S_k + G3[k]."""

    start_hour: int
    g_next: np.ndarray       # < 0 per hour
    g_now: np.ndarray        # > 0 per hour
    base: np.ndarray         # kW per hour
    p_min: np.ndarray        # fleet lower power limit per hour
    p_max: np.ndarray        # fleet upper power limit per hour
    s_init: float            # fleet state at the start of the horizon

    @property
    def horizon(self) -> int:
        return self.g_next.size

    def power(self, s_now, s_next, hour_offset: int = 0):
        return (self.g_next[hour_offset] * s_next
                + self.g_now[hour_offset] * s_now + self.base[hour_offset])


def _sig_round(x: float, digits: int = GROUP_SIG_DIGITS) -> float:
    if x == 0.0:
        return 0.0
    from math import floor, log10
    return round(x, digits - 1 - floor(log10(abs(x))))


def combine(coeffs, kinds) -> UnifiedCoeffs:
    """Sum per-device models into the fleet model for one period.

    Continuous devices add directly.  Two-state devices are first grouped by
    their rounded (g_next, g_now) pair; each group adds count * mean, which
    equals the plain sum - the grouping is the bookkeeping structure, not an
    approximation.
    """
    g1 = g2 = g3 = 0.0
    groups: dict[tuple, list[UnifiedCoeffs]] = {}
    for cf, kind in zip(coeffs, kinds):
        if kind.continuous:
            g1 += cf.g_next
            g2 += cf.g_now
            g3 += cf.base
        else:
            key = (_sig_round(cf.g_next), _sig_round(cf.g_now))
            groups.setdefault(key, []).append(cf)
    for members in groups.values():
        n = len(members)
        g1 += n * (sum(m.g_next for m in members) / n)
        g2 += n * (sum(m.g_now for m in members) / n)
        g3 += n * (sum(m.base for m in members) / n)
    return UnifiedCoeffs(g1, g2, g3)


def build_model(start_hour: int, g_next, g_now, base, member, p_min_dev,
                p_max_dev, s_init: float) -> AggregateModel:
    """Assemble the hourly fleet model from per-device, per-hour inputs.

    Arrays are (devices, hours) for the coefficient tables and the membership
    mask, (devices,) for the power limits.  A device out of the fleet during
    an hour (an unplugged EV) contributes nothing to that hour.
    """
    member = np.asarray(member, dtype=float)
    g1 = (np.asarray(g_next) * member).sum(axis=0)
    g2 = (np.asarray(g_now) * member).sum(axis=0)
    g3 = (np.asarray(base) * member).sum(axis=0)
    p_min = (np.asarray(p_min_dev)[:, None] * member).sum(axis=0)
    p_max = (np.asarray(p_max_dev)[:, None] * member).sum(axis=0)
    return AggregateModel(start_hour, g1, g2, g3, p_min, p_max, float(s_init))


def fleet_limits(kinds, op_min, op_max):
    """Per-device contribution to the fleet power range.

    Continuous devices span their operating range; two-state devices span
    zero to their drawing power.
    """
    kinds = list(kinds)
    op_min = np.asarray(op_min, dtype=float)
    op_max = np.asarray(op_max, dtype=float)
    cont = np.array([k.continuous for k in kinds])
    lo = np.where(cont, op_min, 0.0)
    hi = op_max.copy()
    return lo, hi


def init_s_agg(dos_values) -> float:
    """Fleet state at an optimization boundary: the mean of member states."""
    dos_values = np.asarray(dos_values, dtype=float)
    if dos_values.size == 0:
        return 0.0
    return float(dos_values.mean())
