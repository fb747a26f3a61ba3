"""Scenario configuration: a single TOML file, strictly validated.

Unknown keys fail fast; defaults are materialized on load so a parsed
configuration serializes back to a semantically identical file.  All
relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from .fleet import EesDef, EvDef, FfaDef, FleetDef, IvaDef
from .optimizer import MarketPrices
from .signals import RegDSignal, SeriesError, load_csv, synth_regd
from .sim import MODES, Scenario


class ConfigError(Exception):
    pass


def _pair(v, where):
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    if (isinstance(v, list) and len(v) == 2
            and all(isinstance(x, (int, float)) for x in v)):
        return (float(v[0]), float(v[1]))
    raise ConfigError(f"{where}: expected a number or [low, high] pair")


_SCHEMA = {
    "scenario": {
        "name": ("str", "community230"),
        "mode": ("mode", "dual_market"),
        "seed": ("int", 42),
        "duration_h": ("num", 24.0),
        "control_period_s": ("num", 10.0),
    },
    "constants": {
        "penalty_scale": ("num", 0.1),
        "score_estimate": ("num", 0.92),
        "mileage_estimate": ("num", 2.7),
        "sat_horizon_min": ("num", 5.0),
    },
    "series": {
        "price_energy": ("str", None),
        "price_capacity": ("str", None),
        "price_mileage": ("str", None),
        "temperature": ("str", None),
        "regd": ("regd", {"synth_seed": 7}),
    },
    "fleet.ees": {
        "count": ("int", 10), "capacity_kwh": ("pair", (40.0, 50.0)),
        "power_kw": ("pair", (40.0, 50.0)), "eta_charge": ("num", 0.9),
        "eta_discharge": ("num", 0.9), "soc_bounds": ("pair", (0.1, 0.9)),
        "soc_init": ("num", 0.5), "response_s": ("num", 10.0),
    },
    "fleet.ev": {
        "count": ("int", 20), "capacity_kwh": ("pair", (20.0, 30.0)),
        "power_kw": ("pair", (6.0, 8.0)), "eta": ("num", 0.9),
        "arrive_h": ("pair", (18.0, 22.0)), "depart_h": ("pair", (6.0, 9.0)),
        "deadband_pct": ("num", 2.5), "soc_target": ("pair", (0.75, 0.85)),
        "soc_arrive": ("pair", (0.3, 0.5)), "lockout_min": ("num", 5.0),
    },
    "fleet.iva": {
        "count": ("int", 100), "r_th": ("pair", (1.0, 1.5)),
        "c_th": ("pair", (0.8, 1.2)), "t_set": ("pair", (23.0, 28.0)),
        "t_dev": ("pair", (2.0, 3.0)), "power_min_kw": ("pair", (0.4, 0.5)),
        "power_max_kw": ("pair", (5.0, 6.0)), "power_per_hz": ("num", 0.03),
        "power_offset_kw": ("num", -0.4), "heat_per_hz": ("num", 0.06),
        "heat_offset_kw": ("num", -0.3), "response_s": ("num", 60.0),
    },
    "fleet.ffa": {
        "count": ("int", 100), "r_th": ("pair", (1.0, 1.5)),
        "c_th": ("pair", (0.8, 1.2)), "t_set": ("pair", (23.0, 28.0)),
        "t_dev": ("pair", (2.0, 3.0)), "power_kw": ("pair", (4.5, 5.5)),
        "cop": ("pair", (3.0, 4.0)), "lockout_min": ("num", 5.0),
    },
}


def _coerce(kind, value, where):
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if kind == "num":
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if kind == "pair":
        return _pair(value, where)
    if kind == "mode":
        if value not in MODES:
            raise ConfigError(f"{where}: mode must be one of {MODES}")
        return value
    if kind == "regd":
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        keys = set(value)
        if keys == {"synth_seed"}:
            if not isinstance(value["synth_seed"], int):
                raise ConfigError(f"{where}.synth_seed: expected an integer")
            return {"synth_seed": value["synth_seed"]}
        if keys == {"path"}:
            if not isinstance(value["path"], str):
                raise ConfigError(f"{where}.path: expected a string")
            return {"path": value["path"]}
        raise ConfigError(f"{where}: give exactly one of synth_seed or path")
    raise AssertionError(kind)


def load_config(path) -> dict:
    """Parse, validate, and materialize defaults."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    flat = {}
    for section, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigError(f"unknown top-level key {section!r}")
        if section == "fleet":
            for sub, subbody in body.items():
                flat[f"fleet.{sub}"] = subbody
        else:
            flat[section] = body
    unknown = set(flat) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")

    cfg = {"_dir": str(path.parent)}
    for section, fields in _SCHEMA.items():
        body = flat.get(section, {})
        extra = set(body) - set(fields)
        if extra:
            raise ConfigError(f"[{section}]: unknown key(s) {sorted(extra)}")
        out = {}
        for key, (kind, default) in fields.items():
            if key in body:
                out[key] = _coerce(kind, body[key], f"[{section}].{key}")
            elif default is None:
                raise ConfigError(f"[{section}].{key} is required")
            else:
                out[key] = default
        cfg[section] = out
    return cfg


def serialize_config(cfg: dict) -> str:
    """Emit the materialized configuration as TOML."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int,)):
            return str(v)
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, dict):
            inner = ", ".join(f"{k} = {fmt(x)}" for k, x in v.items())
            return "{" + inner + "}"
        raise AssertionError(type(v))

    lines = []
    for section in _SCHEMA:
        lines.append(f"[{section}]")
        for key, value in cfg[section].items():
            lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def scenario_hash(cfg: dict) -> str:
    """Digest of everything that defines the scenario, except the mode."""
    payload = {k: v for k, v in cfg.items() if k != "_dir"}
    payload["scenario"] = {k: v for k, v in payload["scenario"].items()
                           if k != "mode"}
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_scenario(cfg: dict, mode: str | None = None,
                   seed: int | None = None) -> Scenario:
    """Assemble the runnable scenario from a materialized configuration."""
    base = Path(cfg["_dir"])
    sc, cn, se = cfg["scenario"], cfg["constants"], cfg["series"]

    def series(key, unit, count=None):
        p = base / se[key]
        try:
            ts = load_csv(p, expected_unit=unit)
        except (OSError, SeriesError) as exc:
            raise ConfigError(f"series {key}: {exc}") from exc
        if count and ts.values.size != count:
            raise ConfigError(f"series {key}: expected {count} samples, "
                              f"got {ts.values.size}")
        return ts

    prices = MarketPrices(
        energy=series("price_energy", "usd_per_kwh", 24).values,
        capacity=series("price_capacity", "usd_per_kw_h", 24).values,
        mileage=series("price_mileage", "usd_per_kw_mile", 24).values,
        score_estimate=cn["score_estimate"],
        mileage_estimate=cn["mileage_estimate"],
        penalty_scale=cn["penalty_scale"],
    )
    temperature = series("temperature", "celsius")

    duration = float(sc["duration_h"])
    period = float(sc["control_period_s"])
    regd_cfg = se["regd"]
    if "synth_seed" in regd_cfg:
        regd = synth_regd(regd_cfg["synth_seed"], duration, period)
    else:
        try:
            ts = load_csv(base / regd_cfg["path"], expected_unit="regd")
        except (OSError, SeriesError) as exc:
            raise ConfigError(f"series regd: {exc}") from exc
        if ts.period_s != period:
            from .signals import resample
            ts = resample(ts, period, method="linear")
        regd = RegDSignal(ts)

    iva = cfg["fleet.iva"]
    fleet = FleetDef(
        ees=EesDef(count=cfg["fleet.ees"]["count"],
                   capacity=cfg["fleet.ees"]["capacity_kwh"],
                   power=cfg["fleet.ees"]["power_kw"],
                   eta_charge=cfg["fleet.ees"]["eta_charge"],
                   eta_discharge=cfg["fleet.ees"]["eta_discharge"],
                   soc_bounds=cfg["fleet.ees"]["soc_bounds"],
                   soc_init=cfg["fleet.ees"]["soc_init"],
                   response_s=cfg["fleet.ees"]["response_s"]),
        ev=EvDef(count=cfg["fleet.ev"]["count"],
                 capacity=cfg["fleet.ev"]["capacity_kwh"],
                 power=cfg["fleet.ev"]["power_kw"],
                 eta=cfg["fleet.ev"]["eta"],
                 arrive=cfg["fleet.ev"]["arrive_h"],
                 depart=cfg["fleet.ev"]["depart_h"],
                 deadband_pct=cfg["fleet.ev"]["deadband_pct"],
                 soc_target=cfg["fleet.ev"]["soc_target"],
                 soc_arrive=cfg["fleet.ev"]["soc_arrive"],
                 lockout_min=cfg["fleet.ev"]["lockout_min"]),
        iva=IvaDef(count=iva["count"], r_th=iva["r_th"], c_th=iva["c_th"],
                   t_set=iva["t_set"], t_dev=iva["t_dev"],
                   p_min=iva["power_min_kw"], p_max=iva["power_max_kw"],
                   p1=iva["power_per_hz"], p2=iva["power_offset_kw"],
                   q1=iva["heat_per_hz"], q2=iva["heat_offset_kw"],
                   response_s=iva["response_s"]),
        ffa=FfaDef(count=cfg["fleet.ffa"]["count"],
                   r_th=cfg["fleet.ffa"]["r_th"], c_th=cfg["fleet.ffa"]["c_th"],
                   t_set=cfg["fleet.ffa"]["t_set"], t_dev=cfg["fleet.ffa"]["t_dev"],
                   power=cfg["fleet.ffa"]["power_kw"], cop=cfg["fleet.ffa"]["cop"],
                   lockout_min=cfg["fleet.ffa"]["lockout_min"]),
    )
    return Scenario(
        fleet=fleet, prices=prices, temperature=temperature, regd=regd,
        seed=seed if seed is not None else sc["seed"],
        mode=mode if mode is not None else sc["mode"],
        duration_h=duration, control_period_s=period,
        sat_horizon_min=cn["sat_horizon_min"], name=sc["name"],
    )
