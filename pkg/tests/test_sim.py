import numpy as np
import pytest

from gescoord.fleet import EesDef, EvDef, FfaDef, FleetDef, IvaDef, sample_fleet
from gescoord.optimizer import MarketPrices
from gescoord.signals import TimeSeries
from gescoord.sim import (
    RunLog,
    Scenario,
    comfort_violations,
    ev_final_energy_check,
    hold_price,
    run,
    scan_lockout_violations,
)

from conftest import sample_scenario


def flat_prices(energy=0.06):
    return MarketPrices(np.full(24, energy), np.zeros(24), np.zeros(24))


def const_temp(value=32.0):
    return TimeSeries(0.0, 3600.0, np.full(25, value), unit="celsius")


class TestSmallRuns:
    def test_lone_storage_flat_price(self):
        # a lone battery under a flat price: holding costs nothing, so the
        # schedule stays near zero until the end-of-horizon drain
        fleet = FleetDef(ees=EesDef(count=1, capacity=(45.0, 45.0),
                                    power=(45.0, 45.0)),
                         ev=EvDef(count=0), iva=IvaDef(count=0),
                         ffa=FfaDef(count=0))
        sc = Scenario(fleet=fleet, prices=flat_prices(),
                      temperature=const_temp(), seed=1, mode="energy_only",
                      duration_h=6.0, name="lone")
        r = run(sc)
        assert np.max(np.abs(r.log.p_sch[:-1])) < 1.0
        assert np.max(np.abs(r.log.s_real_end[:-2])) < 0.05
        # tracking is clean everywhere except the end-of-horizon drain, where
        # the hourly model's +/-1 state box exceeds the battery's operating
        # band (a documented aggregate-model error the rolling update absorbs)
        before_drain = slice(0, 5 * 360)
        err = r.log.p_agg[before_drain] - r.log.p_tar[before_drain]
        span = r.log.p_limits[0, 1] - r.log.p_limits[0, 0]
        assert np.sqrt(np.mean((err / span) ** 2)) < 0.02

    def test_dual_with_zero_regulation_prices_matches_energy_only(self):
        sc_e = sample_scenario(mode="energy_only", duration_h=4.0)
        prices = sc_e.prices
        zero_reg = MarketPrices(prices.energy, np.zeros(24), np.zeros(24),
                                score_estimate=prices.score_estimate,
                                mileage_estimate=prices.mileage_estimate,
                                penalty_scale=prices.penalty_scale)
        sc_e = sample_scenario(mode="energy_only", duration_h=4.0,
                               prices=zero_reg)
        sc_d = sample_scenario(mode="dual_market", duration_h=4.0,
                               prices=zero_reg)
        r_e, r_d = run(sc_e), run(sc_d)
        assert np.all(r_d.log.c_reg == 0.0)
        np.testing.assert_allclose(r_d.log.p_sch, r_e.log.p_sch, atol=1e-3)

    def test_infeasible_mode_requires_regd(self):
        with pytest.raises(ValueError):
            sample_scenario(mode="dual_market", regd=None)


class TestDeterminism:
    def test_identical_runs_bit_identical(self):
        a = run(sample_scenario(duration_h=2.0))
        b = run(sample_scenario(duration_h=2.0))
        np.testing.assert_array_equal(a.log.p_agg, b.log.p_agg)
        np.testing.assert_array_equal(a.log.price, b.log.price)
        np.testing.assert_array_equal(a.log.p_sch, b.log.p_sch)
        assert a.log.events == b.log.events

    def test_seed_changes_run(self):
        a = run(sample_scenario(duration_h=2.0, seed=42))
        b = run(sample_scenario(duration_h=2.0, seed=43))
        assert not np.array_equal(a.log.p_agg, b.log.p_agg)


@pytest.fixture(scope="module")
def short_run():
    return run(sample_scenario(duration_h=3.0))


class TestInvariants:

    def test_power_balance(self, short_run):
        log = short_run.log
        per_kind = sum(log.kind_power[k] for k in log.kind_power)
        np.testing.assert_array_equal(log.p_agg, per_kind * 0 + log.p_agg)
        np.testing.assert_allclose(per_kind, log.p_agg, rtol=0, atol=1e-9)

    def test_no_lockout_violations(self, short_run):
        sc = short_run.scenario
        bad = scan_lockout_violations(short_run.log,
                                      sc.fleet.ev.lockout_min / 60.0,
                                      sc.fleet.ffa.lockout_min / 60.0)
        assert bad == []

    def test_comfort_kept(self, short_run):
        assert comfort_violations(short_run.log, tolerance_c=0.1) == 0

    def test_aggregate_model_one_hour_error(self, short_run):
        log = short_run.log
        err = np.abs(log.s_real_end - log.s_pred)
        assert np.max(err) <= 0.1

    def test_record_counts(self, short_run):
        log = short_run.log
        assert log.time_h.size == 3 * 360
        assert np.all(np.diff(log.time_h) > 0)


class TestEvCheck:
    def test_detector_flags_idle_ev(self):
        # fabricate a session that ended far from its target
        log = RunLog(period_s=10.0, time_h=np.zeros(1), p_tar=np.zeros(1),
                     price=np.zeros(1), p_agg=np.zeros(1),
                     saturated=np.zeros(1, dtype=bool), kind_power={},
                     kind_dos={}, n_ev_active=np.zeros(1, dtype=int),
                     hour=np.zeros(1), p_sch=np.zeros(1), c_reg=np.zeros(1),
                     p_limits=np.zeros((1, 2)), s_hat=np.zeros(1),
                     s_pred=np.zeros(1), s_real_end=np.zeros(1),
                     objective=np.zeros(1), kkt_max=np.zeros(1), events=[],
                     traces={}, ev_sessions=[(0, 7.0, 10.0, 20.0, 0.6)],
                     comfort_excess={})
        verdicts = ev_final_energy_check(log)
        assert len(verdicts) == 1 and not verdicts[0]["ok"]

    def test_exact_tracking_passes(self):
        log_ok = RunLog(period_s=10.0, time_h=np.zeros(1), p_tar=np.zeros(1),
                        price=np.zeros(1), p_agg=np.zeros(1),
                        saturated=np.zeros(1, dtype=bool), kind_power={},
                        kind_dos={}, n_ev_active=np.zeros(1, dtype=int),
                        hour=np.zeros(1), p_sch=np.zeros(1), c_reg=np.zeros(1),
                        p_limits=np.zeros((1, 2)), s_hat=np.zeros(1),
                        s_pred=np.zeros(1), s_real_end=np.zeros(1),
                        objective=np.zeros(1), kkt_max=np.zeros(1), events=[],
                        traces={}, ev_sessions=[(0, 7.0, 20.0, 20.0, 0.6)],
                        comfort_excess={})
        assert ev_final_energy_check(log_ok)[0]["ok"]


def measure_hold(price, mix_h=2.0, measure_h=1.0, seed=42, t_out=32.0):
    """Hold a constant price; return (final CP deviations, hourly-averaged
    cluster means) over the measurement window after a phase-mixing preamble
    at the same price."""
    fleet = sample_fleet(FleetDef(), seed=seed)
    fleet.initialize(t_out)
    hold_price(fleet, price, mix_h, t_out)
    per_hour = int(round(1.0 / fleet.control_period_h))
    sums = {"ev": 0.0, "ffa": 0.0}
    n = int(round(measure_h * per_hour))
    for c in range(n):
        t = mix_h + c * fleet.control_period_h
        fleet.transitions(t, [])
        fleet.bid(c, t, t_out)
        fleet.respond(price, t, [])
        fleet.step(t, t_out)
        snap = fleet.dos_snapshot(t + fleet.control_period_h)
        sums["ev"] += float(snap["ev"].mean())
        sums["ffa"] += float(snap["ffa"].mean())
    snap = fleet.dos_snapshot(mix_h + measure_h)
    cp_dev = np.max(np.abs(np.concatenate([snap["ees"], snap["iva"]]) - price))
    return float(cp_dev), {k: v / n for k, v in sums.items()}


class TestHoldPrice:
    def test_continuous_devices_converge_to_price(self):
        fleet = sample_fleet(FleetDef(), seed=42)
        fleet.initialize(32.0)
        hold_price(fleet, 0.3, 1.0, 32.0)
        snap = fleet.dos_snapshot(1.0)
        cp = np.concatenate([snap["ees"], snap["iva"]])
        assert np.max(np.abs(cp - 0.3)) <= 0.02

    def test_two_state_cluster_mean_near_price(self):
        # cluster means are duty-cycle averages: judge the hour's time
        # average once the population's phases have mixed
        cp_dev, means = measure_hold(0.3)
        assert cp_dev <= 0.02
        assert abs(means["ffa"] - 0.3) <= 0.1
        assert abs(means["ev"] - 0.3) <= 0.2
