"""Plot-ready exports: self-contained SVG line charts from run artifacts.

No plotting runtime - charts are emitted directly as SVG text.  Each figure
id maps to a builder that reads the run directory's CSV files.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


def _fmt(v):
    if v == int(v) and abs(v) < 1e7:
        return str(int(v))
    return f"{v:g}"


class Panel:
    """One set of axes: several (label, x, y) line series."""

    def __init__(self, title="", xlabel="", ylabel=""):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.series = []

    def line(self, label, x, y, color=None, width=1.2, dash=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        self.series.append((label, x[keep], y[keep], color, width, dash))
        return self


def render(panels, path, width=880, panel_height=300):
    """Write stacked panels to an SVG file."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 30, 42
    height = panel_height * len(panels)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" font-family="Helvetica, Arial, sans-serif" '
           f'font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for pi, panel in enumerate(panels):
        oy = pi * panel_height
        x0, x1 = pad_l, width - pad_r
        y0, y1 = oy + pad_t, oy + panel_height - pad_b
        xs = [s[1] for s in panel.series if s[1].size]
        ys = [s[2] for s in panel.series if s[2].size]
        if not xs:
            continue
        xlo = min(float(a.min()) for a in xs)
        xhi = max(float(a.max()) for a in xs)
        ylo = min(float(a.min()) for a in ys)
        yhi = max(float(a.max()) for a in ys)
        if yhi == ylo:
            yhi = ylo + 1.0
        span = yhi - ylo
        ylo -= 0.05 * span
        yhi += 0.05 * span

        def sx(v):
            return x0 + (v - xlo) / max(xhi - xlo, 1e-12) * (x1 - x0)

        def sy(v):
            return y1 - (v - ylo) / (yhi - ylo) * (y1 - y0)

        out.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" '
                   f'height="{y1 - y0}" fill="none" stroke="#444"/>')
        for tx in _ticks(xlo, xhi):
            px = sx(tx)
            out.append(f'<line x1="{px:.1f}" y1="{y1}" x2="{px:.1f}" '
                       f'y2="{y1 + 4}" stroke="#444"/>')
            out.append(f'<text x="{px:.1f}" y="{y1 + 16}" '
                       f'text-anchor="middle">{_fmt(tx)}</text>')
        for ty in _ticks(ylo, yhi):
            py = sy(ty)
            out.append(f'<line x1="{x0 - 4}" y1="{py:.1f}" x2="{x0}" '
                       f'y2="{py:.1f}" stroke="#444"/>')
            out.append(f'<line x1="{x0}" y1="{py:.1f}" x2="{x1}" y2="{py:.1f}" '
                       f'stroke="#eee"/>')
            out.append(f'<text x="{x0 - 7}" y="{py + 3:.1f}" '
                       f'text-anchor="end">{_fmt(ty)}</text>')
        for si, (label, x, y, color, lw, dash) in enumerate(panel.series):
            color = color or PALETTE[si % len(PALETTE)]
            step = max(1, x.size // 4000)
            pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}"
                           for a, b in zip(x[::step], y[::step]))
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="{lw}"{dash_attr}/>')
        lx = x0 + 8
        for si, (label, *_rest) in enumerate(panel.series):
            color = panel.series[si][3] or PALETTE[si % len(PALETTE)]
            ly = y0 + 14 + 14 * si
            out.append(f'<line x1="{lx}" y1="{ly - 3}" x2="{lx + 18}" '
                       f'y2="{ly - 3}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{lx + 23}" y="{ly}">{label}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.0f}" y="{y0 - 10}" '
                   f'text-anchor="middle" font-size="13">{panel.title}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.0f}" y="{y1 + 32}" '
                   f'text-anchor="middle">{panel.xlabel}</text>')
        out.append(f'<text x="16" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(y0 + y1) / 2:.0f})">'
                   f'{panel.ylabel}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out))


def _read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    cols = {name: [] for name in head}
    for row in rows[1:]:
        if not row or row[0] == "total":
            continue
        for name, cell in zip(head, row):
            try:
                cols[name].append(float(cell))
            except ValueError:
                cols[name].append(math.nan)
    return {k: np.array(v) for k, v in cols.items()}


def fig_tracking(run_dir, out_path):
    d = _read_csv(Path(run_dir) / "tracking.csv")
    p = Panel("Fleet power vs target", "hour of day", "kW")
    p.line("target", d["time_h"], d["p_tar_kw"], color="#d62728")
    p.line("fleet", d["time_h"], d["p_agg_kw"], color="#1f77b4")
    render([p], out_path)


def fig_dos(run_dir, out_path):
    d = _read_csv(Path(run_dir) / "tracking.csv")
    p = Panel("Flexibility state by device class vs broadcast price",
              "hour of day", "state / price")
    p.line("price", d["time_h"], d["price"], color="#444", width=1.0)
    for i, k in enumerate(("ees", "iva", "ffa", "ev")):
        p.line(k, d["time_h"], d[f"s_{k}"], color=PALETTE[i])
    render([p], out_path)


def fig_schedule(run_dir, out_path):
    d = _read_csv(Path(run_dir) / "hourly.csv")
    p = Panel("Hourly schedule and contracted regulation band",
              "hour", "kW")
    h = d["hour"]
    p.line("scheduled", h, d["p_sch_kw"], color="#1f77b4", width=2.0)
    p.line("sch + cap", h, d["p_sch_kw"] + d["c_reg_kw"], color="#2ca02c",
           dash="4,3")
    p.line("sch - cap", h, d["p_sch_kw"] - d["c_reg_kw"], color="#2ca02c",
           dash="4,3")
    p.line("fleet max", h, d["p_max_kw"], color="#bbb")
    p.line("fleet min", h, d["p_min_kw"], color="#bbb")
    render([p], out_path)


def fig_device_power(run_dir, out_path):
    d = _read_csv(Path(run_dir) / "traces.csv")
    panels = []
    for k, label in (("ees", "battery"), ("iva", "inverter AC"),
                     ("ev", "EV charger"), ("ffa", "fixed AC")):
        col = f"p_{k}_kw"
        if col not in d:
            continue
        p = Panel(f"Sampled {label}: committed power", "hour of day", "kW")
        p.line(label, d["time_h"], d[col])
        panels.append(p)
    render(panels, out_path, panel_height=180)


def fig_ev_energy(run_dir, out_path):
    d = _read_csv(Path(run_dir) / "traces.csv")
    p = Panel("Sampled EV: energy against the expected corridor",
              "hour of day", "kWh")
    active = d.get("ev_active", np.ones_like(d["time_h"]))
    t = d["time_h"]
    mask = active > 0.5
    p.line("energy", t[mask], d["e_ev_kwh"][mask], color="#1f77b4", width=1.8)
    p.line("expected", t[mask], d["e_ev_expected_kwh"][mask], color="#444",
           dash="2,2")
    p.line("upper band", t[mask], d["e_ev_hi_kwh"][mask], color="#d62728",
           dash="4,3")
    p.line("lower band", t[mask], d["e_ev_lo_kwh"][mask], color="#d62728",
           dash="4,3")
    render([p], out_path)


FIGURES = {
    "tracking": fig_tracking,
    "dos": fig_dos,
    "schedule": fig_schedule,
    "device_power": fig_device_power,
    "ev_energy": fig_ev_energy,
}
