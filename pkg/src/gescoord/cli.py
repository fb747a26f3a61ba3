"""Command-line front end.

Commands: run, compare, plot, synth-regd, validate-config.
Exit codes: 0 ok, 2 configuration error, 3 infeasible program, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, build_scenario, load_config, scenario_hash, \
    serialize_config
from .metrics import change_rate
from .optimizer import InfeasibleError, dump_instance
from .plots import FIGURES
from .signals import synth_regd, write_csv
from .sim import ev_final_energy_check, run as run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
MANIFEST_VERSION = 1


def _r(x) -> str:
    return repr(float(x))


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_artifacts(result, out_dir: Path, cfg: dict) -> dict:
    """Write the run's CSV artifacts and manifest; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    log = result.log

    kinds = ("ees", "ev", "iva", "ffa")
    header = (["time_h", "p_tar_kw", "price", "p_agg_kw"]
              + [f"p_{k}_kw" for k in kinds] + [f"s_{k}" for k in kinds]
              + ["ev_active", "saturated"])
    rows = []
    for c in range(log.time_h.size):
        row = [_r(log.time_h[c]), _r(log.p_tar[c]), _r(log.price[c]),
               _r(log.p_agg[c])]
        row += [_r(log.kind_power[k][c]) for k in kinds]
        row += [_r(log.kind_dos[k][c]) for k in kinds]
        row += [str(int(log.n_ev_active[c])), str(int(log.saturated[c]))]
        rows.append(row)
    _write_rows(out_dir / "tracking.csv", header, rows)

    _write_rows(out_dir / "hourly.csv",
                ["hour", "p_sch_kw", "c_reg_kw", "p_min_kw", "p_max_kw",
                 "s_hat", "s_pred_end", "s_real_end", "objective", "kkt_max"],
                [[str(int(h)), _r(log.p_sch[h]), _r(log.c_reg[h]),
                  _r(log.p_limits[h, 0]), _r(log.p_limits[h, 1]),
                  _r(log.s_hat[h]), _r(log.s_pred[h]), _r(log.s_real_end[h]),
                  _r(log.objective[h]), _r(log.kkt_max[h])]
                 for h in range(log.hour.size)])

    cost = result.cost
    cost_rows = [[str(int(h)), _r(cost.energy_bill[i]),
                  _r(cost.capacity_revenue[i]), _r(cost.mileage_revenue[i]),
                  _r(cost.capacity_revenue_expost[i]),
                  _r(cost.mileage_revenue_expost[i])]
                 for i, h in enumerate(cost.hours)]
    cost_rows.append(["total", _r(cost.bill_total),
                      _r(cost.capacity_revenue.sum()),
                      _r(cost.mileage_revenue.sum()),
                      _r(cost.capacity_revenue_expost.sum()),
                      _r(cost.mileage_revenue_expost.sum())])
    _write_rows(out_dir / "costs.csv",
                ["hour", "energy_bill_usd", "capacity_revenue_usd",
                 "mileage_revenue_usd", "capacity_revenue_expost_usd",
                 "mileage_revenue_expost_usd"], cost_rows)

    _write_rows(out_dir / "scores.csv",
                ["hour", "correlation", "delay", "precision", "composite",
                 "mileage", "c_reg_kw"],
                [[str(s.hour), _r(s.correlation), _r(s.delay), _r(s.precision),
                  _r(s.composite), _r(result.mileages[i]), _r(log.c_reg[i])]
                 for i, s in enumerate(result.scores)])

    _write_rows(out_dir / "events.csv",
                ["time_h", "kind", "device", "event", "value"],
                [[_r(t), kind, str(idx), code, _r(val)]
                 for (t, kind, idx, code, val) in log.events])

    traces = log.traces
    header = ["time_h"]
    for k in kinds:
        if k in traces:
            header += [f"p_{k}_kw", f"x_{k}"]
    if "ev" in traces:
        header += ["e_ev_kwh", "e_ev_expected_kwh", "e_ev_lo_kwh",
                   "e_ev_hi_kwh", "ev_active"]
        header.remove("x_ev")
        band = traces["ev"]["band"]
    rows = []
    for c in range(log.time_h.size):
        row = [_r(log.time_h[c])]
        for k in kinds:
            if k not in traces:
                continue
            row.append(_r(traces[k]["power"][c]))
            if k != "ev":
                row.append(_r(traces[k]["state"][c]))
        if "ev" in traces:
            exp = traces["ev"]["expected"][c]
            row += [_r(traces["ev"]["state"][c]), _r(exp), _r(exp - band),
                    _r(exp + band), str(int(traces["ev"]["active"][c]))]
        rows.append(row)
    _write_rows(out_dir / "traces.csv", header, rows)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "package_version": __version__,
        "scenario_hash": scenario_hash(cfg),
        "files": ["tracking.csv", "hourly.csv", "costs.csv", "scores.csv",
                  "events.csv", "traces.csv"],
        "summary": result.summary,
        "ev_sessions": ev_final_energy_check(log),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    scenario = build_scenario(cfg, mode=args.mode, seed=args.seed)
    result = run_scenario(scenario)
    out_dir = Path(args.out)
    manifest = write_artifacts(result, out_dir, cfg)
    if args.dump_solver:
        dump_dir = out_dir / "solver"
        dump_dir.mkdir(exist_ok=True)
        for i, sched in enumerate(result.schedules):
            dump_instance(sched, dump_dir / f"hour_{sched.start_hour:02d}.json")
    s = manifest["summary"]
    print(f"run {s['name']} mode={s['mode']} seed={s['seed']}: "
          f"bill={s['energy_bill_usd']:.2f} $, "
          f"regulation={s['regulation_revenue_usd']:.2f} $, "
          f"total={s['total_cost_usd']:.2f} $, "
          f"tracking rms={100 * s['tracking_rms_frac']:.2f}% of range")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    manifests = []
    for p in args.manifests:
        path = Path(p)
        if path.is_dir():
            path = path / "manifest.json"
        manifests.append(json.loads(path.read_text()))
    base = manifests[0]
    hashes = {m["scenario_hash"] for m in manifests}
    if len(hashes) > 1:
        print("warning: manifests come from different scenarios", file=sys.stderr)

    names = [f"{m['summary']['mode']}" for m in manifests]
    width = max(22, *(len(n) + 2 for n in names))

    def line(label, values, pct=False):
        cells = []
        for v in values:
            if v is None:
                cells.append("-".rjust(width))
            elif pct:
                cells.append(f"{100 * v:+.1f}".rjust(width))
            else:
                cells.append(f"{v:.1f}".rjust(width))
        print(label.ljust(26) + "".join(cells))

    print("".ljust(26) + "".join(n.rjust(width) for n in names))
    bills = [m["summary"]["energy_bill_usd"] for m in manifests]
    totals = [m["summary"]["total_cost_usd"] for m in manifests]
    regs = [m["summary"]["regulation_revenue_usd"] for m in manifests]
    line("energy bill / $", bills)
    line("  change vs first / %",
         [None] + [change_rate(b, bills[0]) for b in bills[1:]], pct=True)
    line("regulation revenue / $", regs)
    line("total cost / $", totals)
    line("  change vs first / %",
         [None] + [change_rate(t, totals[0]) for t in totals[1:]], pct=True)
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.figure not in FIGURES:
        print(f"unknown figure {args.figure!r}; available: "
              f"{', '.join(sorted(FIGURES))}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{args.figure}.svg"
    FIGURES[args.figure](args.run, out_path)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_synth_regd(args) -> int:
    sig = synth_regd(args.seed, args.duration_h, args.period_s)
    write_csv(sig.series, args.out)
    miles = sig.mileage_per_hour
    print(f"wrote {args.out}: {sig.series.values.size} samples, "
          f"hourly mileage {miles.min():.2f}..{miles.max():.2f}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(serialize_config(cfg))
    print(f"# scenario_hash = {scenario_hash(cfg)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gescoord",
                                 description="Coordinate a generalized energy "
                                             "storage fleet across energy and "
                                             "regulation markets.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("baseline", "energy_only", "dual_market"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("--dump-solver", action="store_true",
                   help="also dump every solved hourly program")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", help="tabulate costs across run manifests")
    p.add_argument("manifests", nargs="+",
                   help="manifest.json paths or run directories (>= 2)")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("plot", help="render an SVG figure from run artifacts")
    p.add_argument("--run", required=True, help="run artifact directory")
    p.add_argument("--figure", required=True)
    p.add_argument("--out", default="plots")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("synth-regd", help="generate a synthetic regulation day")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--duration-h", type=float, default=24.0)
    p.add_argument("--period-s", type=float, default=10.0)
    p.add_argument("--out", default="regd.csv")
    p.set_defaults(fn=cmd_synth_regd)

    p = sub.add_parser("validate-config",
                       help="check a scenario file and print it materialized")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare" and len(args.manifests) < 2:
            print("compare needs at least two manifests", file=sys.stderr)
            return EXIT_CONFIG
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible program: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
