import numpy as np
import pytest

from gescoord import market
from gescoord.devices import (
    DeviceState,
    EesParams,
    EvParams,
    GesKind,
    TclParams,
    build_demand_curve,
    dos,
    respond,
    step_physics,
)
from gescoord.fleet import EesDef, EvDef, FfaDef, FleetDef, IvaDef, sample_fleet

SMALL = FleetDef(ees=EesDef(count=3), ev=EvDef(count=4), iva=IvaDef(count=5),
                 ffa=FfaDef(count=6))


def small_fleet(seed=11):
    f = sample_fleet(SMALL, seed)
    f.initialize(32.0)
    return f


class TestSampling:
    def test_default_counts(self):
        f = sample_fleet(FleetDef(), 1)
        assert f.size == 230

    def test_same_seed_identical(self):
        a, b = small_fleet(5), small_fleet(5)
        np.testing.assert_array_equal(a.ees.capacity, b.ees.capacity)
        np.testing.assert_array_equal(a.ev.t_in, b.ev.t_in)
        np.testing.assert_array_equal(a.iva.r_th, b.iva.r_th)
        np.testing.assert_array_equal(a.ffa.on, b.ffa.on)

    def test_different_seed_differs(self):
        a, b = small_fleet(5), small_fleet(6)
        assert not np.array_equal(a.ees.capacity, b.ees.capacity)

    def test_degenerate_bounds(self):
        d = FleetDef(ees=EesDef(count=4, capacity=(45.0, 45.0)),
                     ev=EvDef(count=0), iva=IvaDef(count=0), ffa=FfaDef(count=0))
        f = sample_fleet(d, 3)
        assert np.all(f.ees.capacity == 45.0)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            sample_fleet(FleetDef(ees=EesDef(count=1, capacity=(50.0, 40.0))), 1)

    def test_initial_states_neutral(self):
        f = small_fleet()
        snap = f.dos_snapshot(0.0)
        for kind, vals in snap.items():
            np.testing.assert_allclose(vals, 0.0, atol=1e-9, err_msg=kind)


def scalar_params(fleet, kind, i):
    """Recover one device's scalar param object from the fleet arrays."""
    if kind is GesKind.EES:
        g = fleet.ees
        return EesParams(capacity=g.capacity[i], power_nom=g.power_nom[i],
                         eta_charge=g.eta_c[i], eta_discharge=g.eta_d[i],
                         energy_min=g.e_min[i], energy_max=g.e_max[i])
    if kind is GesKind.EV:
        g = fleet.ev
        return EvParams(capacity=g.capacity[i], power_nom=g.power_nom[i],
                        eta=g.eta[i], t_in=g.sess_t_in[i],
                        t_dep=g.sess_t_in[i] + (g.t_dep[i] + 24.0 - g.t_in[i]),
                        energy_in=g.e_in[i], energy_target=g.e_tar[i],
                        deadband=g.band[i] / g.capacity[i])
    if kind is GesKind.IVA:
        g = fleet.iva
        return TclParams(r_th=g.r_th[i], c_th=g.c_th[i], t_set=g.t_set[i],
                         t_dev=g.t_dev[i], p_min=g.p_min[i], p_max=g.p_max[i],
                         p1=g.p1, p2=g.p2, q1=g.q1, q2=g.q2)
    g = fleet.ffa
    return TclParams(r_th=g.r_th[i], c_th=g.c_th[i], t_set=g.t_set[i],
                     t_dev=g.t_dev[i], power_nom=g.power_nom[i], cop=g.cop[i])


class TestVectorScalarParity:
    """One market cycle through the fleet engine must match per-device calls."""

    def test_one_cycle(self):
        t, t_out, price = 0.0, 32.0, 0.18
        fv = small_fleet()
        states = self._device_states(fv, t)

        bids = fv.bid(0, t, t_out)
        agg_fast = market.aggregate_bids(bids)
        curves = [build_demand_curve(st, p, kind, t_out=t_out, sim_time=t,
                                     locked=locked)
                  for (kind, st, p, locked) in states]
        agg_obj = market.aggregate(curves)
        for lam in np.linspace(-1, 1, 41):
            assert agg_fast.evaluate(float(lam)) == pytest.approx(
                agg_obj.evaluate(float(lam)), rel=1e-9, abs=1e-9)

        events = []
        fv.respond(price, t, events)
        total_scalar = 0.0
        for (kind, st, p, locked), curve in zip(states, curves):
            dec = respond(st, p, kind, curve, price, sim_time=t, locked=locked, t_out=t_out)
            total_scalar += dec.power
        assert fv.total_power() == pytest.approx(total_scalar, rel=1e-9)
        # conservation against the aggregate curve at the broadcast price
        assert agg_obj.evaluate(price) == pytest.approx(total_scalar,
                                                        rel=1e-9, abs=1e-6)

    def test_physics_parity(self):
        t, t_out = 0.0, 33.5
        fv = small_fleet()
        states = self._device_states(fv, t)
        fv.bid(0, t, t_out)
        events = []
        fv.respond(-0.25, t, events)
        powers = np.concatenate([fv.ees.committed, fv.ev.committed,
                                 fv.iva.committed, fv.ffa.committed])
        fv.step(t, t_out)
        dt = fv.control_period_h
        i = 0
        for kind, st, p, locked in states:
            new = step_physics(st, p, kind, float(powers[i]), dt, t_out=t_out)
            if kind is GesKind.EES:
                assert new.energy == pytest.approx(fv.ees.energy[i], rel=1e-12)
            elif kind is GesKind.EV:
                j = i - fv.ees.n
                assert new.energy == pytest.approx(fv.ev.energy[j], rel=1e-12)
            elif kind is GesKind.IVA:
                j = i - fv.ees.n - fv.ev.n
                assert new.temp == pytest.approx(fv.iva.temp[j], abs=1e-12)
            else:
                j = i - fv.ees.n - fv.ev.n - fv.iva.n
                assert new.temp == pytest.approx(fv.ffa.temp[j], abs=1e-12)
            i += 1

    @staticmethod
    def _device_states(fv, t):
        states = []
        for i in range(fv.ees.n):
            p = scalar_params(fv, GesKind.EES, i)
            states.append((GesKind.EES, DeviceState(energy=fv.ees.energy[i]),
                           p, False))
        for i in range(fv.ev.n):
            p = scalar_params(fv, GesKind.EV, i)
            st = DeviceState(energy=fv.ev.energy[i], on=bool(fv.ev.on[i]),
                             power=fv.ev.committed[i])
            states.append((GesKind.EV, st, p, bool(t < fv.ev.lock_until[i])))
        for i in range(fv.iva.n):
            p = scalar_params(fv, GesKind.IVA, i)
            st = DeviceState(temp=fv.iva.temp[i], power=fv.iva.committed[i])
            locked = (0 % fv.iva_ratio) != fv.iva_offset[i]
            states.append((GesKind.IVA, st, p, bool(locked)))
        for i in range(fv.ffa.n):
            p = scalar_params(fv, GesKind.FFA, i)
            st = DeviceState(temp=fv.ffa.temp[i], on=bool(fv.ffa.on[i]),
                             power=fv.ffa.committed[i])
            states.append((GesKind.FFA, st, p, bool(t < fv.ffa.lock_until[i])))
        return states


class TestEvSessions:
    def test_departure_and_arrival(self):
        f = small_fleet()
        events = []
        dep = float(f.ev.t_dep.min())
        f.transitions(dep + 1e-6, events)
        assert any(e[3] == "depart" for e in events)
        assert len(f.ev.sessions) >= 1
        gone = ~f.ev.in_session
        assert np.all(f.ev.committed[gone] == 0.0)

        events.clear()
        arr = float(f.ev.t_in.max())
        f.transitions(arr + 1e-6, events)
        assert any(e[3] == "arrive" for e in events)
        assert np.all(f.ev.in_session)
        back = np.isclose(f.ev.energy, f.ev.e_in)
        assert np.all(back)

    def test_membership_fraction(self):
        f = small_fleet()
        frac = f.ev.on_grid_fraction(np.arange(24))
        assert frac.shape == (f.ev.n, 24)
        # plugged overnight: fully on-grid at midnight, fully off at noon
        assert np.all(frac[:, 0] == 1.0)
        assert np.all(frac[:, 12] == 0.0)
        for i in range(f.ev.n):
            lo = int(np.floor(f.ev.t_dep[i]))
            assert frac[i, lo] == pytest.approx(f.ev.t_dep[i] - lo, abs=1e-9)


class TestLockoutMechanics:
    def test_switch_starts_lockout(self):
        f = small_fleet()
        f.ffa.on[:] = False
        f.ffa.temp[:] = f.ffa.t_set + f.ffa.t_dev + 0.01   # comfort forces on
        events = []
        f.bid(0, 0.0, 34.0)
        f.respond(0.5, 0.0, events)
        assert np.all(f.ffa.on)
        assert np.all(f.ffa.lock_until > 0.0)
        # immediately after, a price trying to switch them off is ignored
        f.bid(1, 10 / 3600, 34.0)
        f.respond(1.0, 10 / 3600, events)
        assert np.all(f.ffa.on)

    def test_locked_bid_is_flat(self):
        f = small_fleet()
        f.ffa.lock_until[:] = 1.0   # locked for the first hour
        bids = f.bid(0, 0.0, 33.0)
        # no FFA step bids; their committed power shows up as flat volume
        assert bids.step_threshold.size == f.ev.n
        assert bids.flat_total >= float(f.ffa.committed.sum()) - 1e-9
