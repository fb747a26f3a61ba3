from pathlib import Path

import numpy as np
import pytest

from gescoord.devices import EesParams, EvParams, GesKind, TclParams

REPO = Path(__file__).resolve().parent.parent
SCENARIO_FILE = REPO / "scenarios" / "community230.toml"


def sample_scenario(mode="dual_market", seed=42, **overrides):
    """The bundled 230-device scenario, optionally tweaked."""
    from gescoord.config import build_scenario, load_config
    cfg = load_config(SCENARIO_FILE)
    sc = build_scenario(cfg, mode=mode, seed=seed)
    if overrides:
        from dataclasses import replace
        sc = replace(sc, **overrides)
    return sc


@pytest.fixture
def ees_params():
    return EesParams(capacity=45.0, power_nom=45.0, eta_charge=0.9,
                     eta_discharge=0.9, energy_min=4.5, energy_max=40.5)


@pytest.fixture
def ev_params():
    # overnight session, 10 h plugged in
    return EvParams(capacity=24.0, power_nom=7.0, eta=0.9, t_in=20.0,
                    t_dep=30.0, energy_in=7.2, energy_target=19.2,
                    deadband=0.025)


@pytest.fixture
def iva_params():
    return TclParams(r_th=1.25, c_th=1.0, t_set=25.0, t_dev=2.5,
                     p_min=0.4, p_max=6.0, p1=0.03, p2=-0.4, q1=0.06, q2=-0.3)


@pytest.fixture
def ffa_params():
    return TclParams(r_th=1.25, c_th=1.0, t_set=25.0, t_dev=2.5,
                     power_nom=5.0, cop=3.5)


def random_params(kind, rng):
    """Scenario-realistic random parameter draw for property tests."""
    if kind is GesKind.EES:
        cap = rng.uniform(40, 50)
        return EesParams(capacity=cap, power_nom=rng.uniform(40, 50),
                         eta_charge=0.9, eta_discharge=0.9,
                         energy_min=0.1 * cap, energy_max=0.9 * cap)
    if kind is GesKind.EV:
        cap = rng.uniform(20, 30)
        t_in = rng.uniform(18, 22)
        soc_tar = rng.uniform(0.75, 0.85)
        soc_in = rng.uniform(0.3, 0.5)
        return EvParams(capacity=cap, power_nom=rng.uniform(6, 8), eta=0.9,
                        t_in=t_in, t_dep=rng.uniform(6, 9) + 24.0,
                        energy_in=soc_in * cap, energy_target=soc_tar * cap,
                        deadband=0.025)
    if kind is GesKind.IVA:
        return TclParams(r_th=rng.uniform(1.0, 1.5), c_th=rng.uniform(0.8, 1.2),
                         t_set=rng.uniform(23, 28), t_dev=rng.uniform(2, 3),
                         p_min=rng.uniform(0.4, 0.5), p_max=rng.uniform(5, 6),
                         p1=0.03, p2=-0.4, q1=0.06, q2=-0.3)
    return TclParams(r_th=rng.uniform(1.0, 1.5), c_th=rng.uniform(0.8, 1.2),
                     t_set=rng.uniform(23, 28), t_dev=rng.uniform(2, 3),
                     power_nom=rng.uniform(4.5, 5.5), cop=rng.uniform(3, 4))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
