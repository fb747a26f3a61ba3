"""Exogenous time series: loading, validation, resampling, and the synthetic
regulation signal.

Series are uniformly sampled.  CSV files carry `timestamp_iso8601,value`
rows (header optional); timestamps are UTC.  A single missing sample is
filled by linear interpolation with a warning, anything worse is rejected
with the offending line number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np


class SeriesError(Exception):
    """A series file failed validation."""


@dataclass(frozen=True)
class TimeSeries:
    start: float                 # hours from simulation origin (usually 0)
    period_s: float
    values: np.ndarray
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.period_s <= 0:
            raise ValueError("period_s must be positive")
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("values must be a nonempty vector")
        if np.any(~np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @property
    def period_h(self) -> float:
        return self.period_s / 3600.0

    @property
    def duration_h(self) -> float:
        return self.start + (self.values.size - 1) * self.period_h

    def times_h(self) -> np.ndarray:
        return self.start + np.arange(self.values.size) * self.period_h

    def at(self, t_h) -> np.ndarray:
        """Linear interpolation, clamped at the ends."""
        pos = (np.asarray(t_h, dtype=float) - self.start) / self.period_h
        pos = np.clip(pos, 0.0, self.values.size - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, self.values.size - 1)
        frac = pos - lo
        out = self.values[lo] * (1.0 - frac) + self.values[hi] * frac
        return out if out.ndim else float(out)

    def held_at(self, t_h) -> np.ndarray:
        """Zero-order-hold lookup (step semantics, e.g. hourly prices)."""
        pos = (np.asarray(t_h, dtype=float) - self.start) / self.period_h
        idx = np.clip(np.floor(pos + 1e-9).astype(int), 0, self.values.size - 1)
        out = self.values[idx]
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class RegDSignal:
    """Regulation signal in [-1, 1] with its per-hour mileage cache."""

    series: TimeSeries
    mileage_per_hour: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = self.series.values
        if np.any(vals < -1.0 - 1e-9) or np.any(vals > 1.0 + 1e-9):
            raise SeriesError("regulation signal values must lie in [-1, 1]")
        if self.mileage_per_hour is None:
            per_hour = int(round(3600.0 / self.series.period_s))
            n_hours = vals.size // per_hour
            steps = np.abs(np.diff(vals[:n_hours * per_hour]))
            # the step crossing each hour boundary belongs to the earlier hour
            miles = np.zeros(n_hours)
            for h in range(n_hours):
                a, b = h * per_hour, min((h + 1) * per_hour, steps.size + 1)
                miles[h] = steps[a:b].sum() if a < steps.size else 0.0
            object.__setattr__(self, "mileage_per_hour", miles)


def _parse_timestamp(text: str, line_no: int) -> float:
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise SeriesError(f"line {line_no}: bad timestamp {text!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def load_csv(path, expected_unit: str = "") -> TimeSeries:
    """Load a two-column (timestamp, value) series and validate its spacing.

    The file may start with a header row and with a `# unit: X` comment; if
    the declared unit disagrees with ``expected_unit`` the load fails.
    """
    stamps, values = [], []
    unit = expected_unit
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "unit:" in line:
                    declared = line.split("unit:", 1)[1].strip()
                    if expected_unit and declared != expected_unit:
                        raise SeriesError(f"line {line_no}: unit {declared!r} does "
                                          f"not match expected {expected_unit!r}")
                    unit = declared
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != 2:
                raise SeriesError(f"line {line_no}: expected two columns")
            if line_no <= 2 and not _looks_numeric(cells[1]):
                continue   # header row
            t = _parse_timestamp(cells[0], line_no)
            try:
                v = float(cells[1])
            except ValueError as exc:
                raise SeriesError(f"line {line_no}: bad value {cells[1]!r}") from exc
            if stamps and t <= stamps[-1][0]:
                raise SeriesError(f"line {line_no}: timestamps must increase")
            stamps.append((t, line_no))
            values.append(v)
    if len(values) < 2:
        raise SeriesError(f"{path}: need at least two samples")

    t_arr = np.array([s[0] for s in stamps])
    diffs = np.diff(t_arr)
    period = float(np.min(diffs))
    out_t, out_v = [t_arr[0]], [values[0]]
    for i in range(1, len(values)):
        gap = t_arr[i] - out_t[-1]
        n_missing = int(round(gap / period)) - 1
        if abs(gap - (n_missing + 1) * period) > 0.01 * period:
            raise SeriesError(f"line {stamps[i][1]}: spacing {gap:.3f}s is not a "
                              f"multiple of the base period {period:.3f}s")
        if n_missing > 1:
            raise SeriesError(f"line {stamps[i][1]}: gap of {n_missing} samples "
                              f"(only single gaps are filled)")
        if n_missing == 1:
            warnings.warn(f"{path}: one missing sample before line {stamps[i][1]}, "
                          f"filled by interpolation")
            out_t.append(out_t[-1] + period)
            out_v.append(0.5 * (out_v[-1] + values[i]))
        out_t.append(t_arr[i])
        out_v.append(values[i])
    start_h = 0.0
    return TimeSeries(start=start_h, period_s=period, values=np.array(out_v),
                      unit=unit)


def _looks_numeric(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def resample(series: TimeSeries, new_period_s: float,
             method: str = "hold") -> TimeSeries:
    """Change the sample period; ``hold`` repeats values (price semantics),
    ``linear`` interpolates (temperature, regulation)."""
    old, new = series.period_s, float(new_period_s)
    if new <= 0:
        raise ValueError("new_period_s must be positive")
    ratio = old / new if old >= new else new / old
    if abs(ratio - round(ratio)) > 1e-9:
        raise SeriesError(f"periods {old}s and {new}s are incompatible")
    if new == old:
        return series
    if new < old:
        k = int(round(old / new))
        if method == "hold":
            # step semantics: every sample is held over its whole old period
            vals = np.repeat(series.values, k)
        else:
            # interpolation grid spanning the original sample instants
            n = (series.values.size - 1) * k + 1
            t = series.start + np.arange(n) * new / 3600.0
            vals = series.at(t)
        return TimeSeries(series.start, new, vals, series.unit)
    k = int(round(new / old))
    vals = series.values[::k]
    return TimeSeries(series.start, new, vals, series.unit)


def synth_regd(seed: int, duration_h: float = 24.0,
               period_s: float = 10.0) -> RegDSignal:
    """Deterministic synthetic regulation day.

    A slow AR(1) wander whose per-step noise is sized so each hour's total
    variation lands near 2.7; hourly means are removed so every hour is
    nearly zero-mean; the result is clipped to [-1, 1].
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_h * 3600.0 / period_s))
    sigma = 0.0095 * math.sqrt(period_s / 10.0)
    rho = math.exp(-period_s / 20000.0)
    x = np.empty(n)
    x[0] = 0.0
    noise = rng.normal(0.0, sigma, size=n)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + noise[i]
    per_hour = int(round(3600.0 / period_s))
    n_hours = n // per_hour
    for h in range(n_hours):
        sl = slice(h * per_hour, (h + 1) * per_hour)
        x[sl] -= x[sl].mean()
    if n_hours * per_hour < n:
        x[n_hours * per_hour:] -= x[n_hours * per_hour:].mean()
    x = np.clip(x, -1.0, 1.0)
    return RegDSignal(TimeSeries(0.0, period_s, x, unit="regd"))


def write_csv(series: TimeSeries, path, origin: str = "2024-01-01T00:00:00+00:00"):
    """Write a series in the package's two-column CSV format."""
    t0 = datetime.fromisoformat(origin)
    with open(path, "w") as fh:
        if series.unit:
            fh.write(f"# unit: {series.unit}\n")
        fh.write("timestamp,value\n")
        for i, v in enumerate(series.values):
            t = t0.timestamp() + series.start * 3600.0 + i * series.period_s
            stamp = datetime.fromtimestamp(t, tz=timezone.utc)
            fh.write(f"{stamp.isoformat().replace('+00:00', 'Z')},{float(v)!r}\n")
