import numpy as np
import pytest

from gescoord.aggregate import AggregateModel
from gescoord.optimizer import (
    InfeasibleError,
    MarketPrices,
    penalty,
    solve_baseline,
    solve_dual_market,
    solve_energy_only,
)


def toy_model(start=0, horizon=3, g1=-400.0, g2=350.0, base=250.0,
              p_min=-300.0, p_max=1200.0, s_init=0.0):
    H = horizon
    return AggregateModel(start,
                          np.full(H, g1), np.full(H, g2), np.full(H, base),
                          np.full(H, p_min), np.full(H, p_max), s_init)


def flat_prices(energy=0.06, cap=0.0, mile=0.0):
    return MarketPrices(np.full(24, energy), np.full(24, cap), np.full(24, mile))


def grid_oracle(model, prices, mode, levels=(0.05, 0.01, 0.002, 0.0004, 1e-4)):
    """Coarse-to-fine exhaustive search over state trajectories.

    The regulation capacity is eliminated in closed form per grid point:
    with a positive payoff it is the largest value the limit rows allow,
    otherwise zero.  Convexity makes the multiscale refinement exact to the
    final grid step.
    """
    H = model.horizon
    hours = model.start_hour + np.arange(H)
    payoff = prices.regulation_payoff()[hours] if mode == "dual_market" else np.zeros(H)
    mu_e = prices.energy[hours] if mode != "baseline" else np.zeros(H)
    if mode == "baseline":
        w_pen = np.zeros(H)
    else:
        w_pen = prices.penalty_scale * prices.energy_mean * (model.p_max - model.p_min)

    def objective(S):   # S: (points, H+1) trajectories including s_init
        P = (model.g_next * S[:, 1:] + model.g_now * S[:, :-1] + model.base)
        feas = np.ones(len(S), dtype=bool)
        val = np.zeros(len(S))
        if mode == "baseline":
            val += (S[:, 1:] ** 2).sum(axis=1) + S[:, 0] ** 2
            feas &= np.all(P <= model.p_max + 1e-9, axis=1)
            feas &= np.all(P >= model.p_min - 1e-9, axis=1)
        else:
            val += (mu_e * P).sum(axis=1)
            val += (w_pen * S[:, 1:] ** 2).sum(axis=1)
            if mode == "dual_market":
                c = np.minimum(model.p_max - P, P - model.p_min)
                c = np.where(payoff > 0, np.maximum(c, 0.0), 0.0)
                feas &= np.all(P <= model.p_max + 1e-9, axis=1)
                feas &= np.all(P >= model.p_min - 1e-9, axis=1)
                val -= (payoff * c).sum(axis=1)
            else:
                feas &= np.all(P <= model.p_max + 1e-9, axis=1)
                feas &= np.all(P >= model.p_min - 1e-9, axis=1)
        val[~feas] = np.inf
        return val

    center = np.zeros(H)
    span = 1.0
    best = None
    for step in levels:
        axes = [np.clip(np.arange(c - span, c + span + step / 2, step), -1, 1)
                for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        S = np.concatenate([np.full((len(pts), 1), model.s_init), pts], axis=1)
        vals = objective(S)
        i = int(np.argmin(vals))
        best = (vals[i], pts[i])
        center = pts[i]
        span = 2.5 * step
    return best


class TestPenalty:
    def test_zero_state(self):
        assert penalty(0.0, 0, flat_prices(), (-500.0, 500.0)) == 0.0

    def test_worked_value(self):
        pr = MarketPrices(np.full(24, 0.05), np.zeros(24), np.zeros(24))
        assert penalty(0.5, 3, pr, (0.0, 1000.0)) == pytest.approx(1.25, rel=1e-12)

    def test_linear_in_range(self):
        pr = flat_prices()
        one = penalty(0.4, 0, pr, (0.0, 800.0))
        two = penalty(0.4, 0, pr, (0.0, 1600.0))
        assert two == pytest.approx(2 * one, rel=1e-12)


class TestDualMarket:
    def test_zero_regulation_prices_gives_zero_capacity(self):
        sched = solve_dual_market(toy_model(), flat_prices(cap=0.0, mile=0.0))
        assert np.all(sched.c_reg == 0.0)
        assert max(sched.kkt.values()) < 1e-6

    def test_capacity_centers_the_schedule(self):
        # a strongly paid hour pulls the schedule toward the midpoint of the
        # fleet limits so capacity can be sold on both sides
        m = toy_model(horizon=2, p_min=-400.0, p_max=1000.0)
        pr = MarketPrices(np.full(24, 0.01), np.full(24, 0.5), np.zeros(24))
        sched = solve_dual_market(m, pr)
        mid = 0.5 * (m.p_min[0] + m.p_max[0])
        headroom = np.minimum(m.p_max - sched.p_sch, sched.p_sch - m.p_min)
        assert np.all(sched.c_reg >= headroom - 1e-4)
        assert abs(sched.p_sch[0] - mid) < 150.0
        assert max(sched.kkt.values()) < 1e-6

    def test_oracle_agreement_random_instances(self, rng):
        for trial in range(6):
            H = int(rng.integers(1, 4))
            m = AggregateModel(
                int(rng.integers(0, 22)),
                -rng.uniform(200, 600, H), rng.uniform(150, 500, H),
                rng.uniform(50, 400, H),
                np.full(H, -rng.uniform(100, 400)), np.full(H, rng.uniform(600, 1400)),
                float(rng.uniform(-0.3, 0.3)))
            pr = MarketPrices(rng.uniform(0.02, 0.1, 24),
                              rng.uniform(0.0, 0.05, 24),
                              rng.uniform(0.0, 0.01, 24))
            sched = solve_dual_market(m, pr)
            f_oracle, _ = grid_oracle(m, pr, "dual_market")
            assert sched.objective <= f_oracle + 1e-4 * (1 + abs(f_oracle))
            assert max(sched.kkt.values()) < 1e-6

    def test_monotone_capacity_in_price(self, rng):
        for _ in range(5):
            H = 3
            m = toy_model(horizon=H)
            base_cap = rng.uniform(0.005, 0.02)
            caps = np.full(24, base_cap)
            pr1 = MarketPrices(np.full(24, 0.05), caps.copy(), np.full(24, 0.002))
            s1 = solve_dual_market(m, pr1)
            caps2 = caps.copy()
            caps2[1] *= 3.0
            pr2 = MarketPrices(np.full(24, 0.05), caps2, np.full(24, 0.002))
            s2 = solve_dual_market(m, pr2)
            assert s2.c_reg[1] >= s1.c_reg[1] - 1e-5


class TestEnergyOnly:
    def test_flat_price_interior_states_near_zero(self):
        # flat price: interior states sit at the small standby optimum
        # -mu*(g1+g2)/(2*w_pen); the final state takes the end-of-horizon
        # drain min(1, -mu*g1/(2*w_pen)) because stored energy has no value
        # past the horizon under equal purchase/sale prices
        m = toy_model(s_init=0.0)
        pr = flat_prices()
        sched = solve_energy_only(m, pr)
        w_pen = pr.penalty_scale * pr.energy_mean * (m.p_max[0] - m.p_min[0])
        s_mid = -pr.energy_mean * (m.g_next[0] + m.g_now[0]) / (2 * w_pen)
        s_end = min(1.0, -pr.energy_mean * m.g_next[0] / (2 * w_pen))
        assert sched.s_traj[1:-1] == pytest.approx(np.full(2, s_mid), abs=1e-4)
        assert sched.s_traj[-1] == pytest.approx(s_end, abs=1e-4)
        # an all-battery fleet (g_now == -g_next) has no standby drift at all
        # (limits wide enough that the final drain needs no pre-positioning)
        m2 = toy_model(g1=-400.0, g2=400.0, base=0.0, s_init=0.0,
                       p_min=-600.0, p_max=1200.0)
        sched2 = solve_energy_only(m2, pr)
        assert np.max(np.abs(sched2.s_traj[:-1])) < 1e-4

    def test_precharges_before_expensive_hour(self):
        m = toy_model(horizon=2)
        energy = np.full(24, 0.05)
        energy[0], energy[1] = 0.02, 0.12
        pr = MarketPrices(energy, np.zeros(24), np.zeros(24))
        sched = solve_energy_only(m, pr)
        assert sched.p_sch[0] > sched.p_sch[1]
        f_oracle, _ = grid_oracle(m, pr, "energy_only")
        assert sched.objective <= f_oracle + 1e-4 * (1 + abs(f_oracle))

    def test_binding_limit_has_active_multiplier(self):
        # make the cheap-hour purchase press against the fleet maximum
        m = toy_model(horizon=2, p_max=320.0)
        energy = np.full(24, 0.05)
        energy[0], energy[1] = 0.001, 0.2
        pr = MarketPrices(energy, np.zeros(24), np.zeros(24))
        sched = solve_energy_only(m, pr)
        assert sched.p_sch[0] == pytest.approx(320.0, abs=1e-3)
        labels = sched.problem["labels"]
        z = sched.problem["z"]
        i = labels.index(("power_max", 0))
        assert z[i] > 1e-6

    def test_oracle_agreement(self, rng):
        for _ in range(6):
            H = int(rng.integers(1, 4))
            m = AggregateModel(
                0, -rng.uniform(200, 600, H), rng.uniform(150, 500, H),
                rng.uniform(50, 400, H),
                np.full(H, -rng.uniform(100, 400)), np.full(H, rng.uniform(600, 1400)),
                float(rng.uniform(-0.3, 0.3)))
            pr = MarketPrices(rng.uniform(0.02, 0.1, 24), np.zeros(24), np.zeros(24))
            sched = solve_energy_only(m, pr)
            f_oracle, _ = grid_oracle(m, pr, "energy_only")
            assert sched.objective <= f_oracle + 1e-4 * (1 + abs(f_oracle))
            assert max(sched.kkt.values()) < 1e-6


class TestBaseline:
    def test_zero_state_attainable(self):
        m = toy_model()
        sched = solve_baseline(m)
        assert np.max(np.abs(sched.s_traj)) < 1e-5
        assert np.allclose(sched.p_sch, m.base, atol=0.05)

    def test_limits_force_nonzero_state(self):
        # base power above the fleet maximum: the state must absorb the excess
        m = toy_model(horizon=1, base=500.0, p_max=420.0, g1=-400.0, g2=350.0)
        sched = solve_baseline(m)
        # single hour, closed form: S1 = (P - g2*s0 - base)/g1 with P clipped
        s1_expected = (420.0 - 0.0 - 500.0) / -400.0
        assert sched.s_traj[1] == pytest.approx(s1_expected, abs=1e-6)
        assert sched.p_sch[0] == pytest.approx(420.0, abs=1e-3)

    def test_single_hour_projection(self, rng):
        for _ in range(20):
            g1 = -float(rng.uniform(200, 600))
            g2 = float(rng.uniform(150, 500))
            base = float(rng.uniform(0, 600))
            s0 = float(rng.uniform(-0.5, 0.5))
            p_min, p_max = -200.0, 900.0
            m = AggregateModel(0, np.array([g1]), np.array([g2]), np.array([base]),
                               np.array([p_min]), np.array([p_max]), s0)
            sched = solve_baseline(m)
            # closed form: S1 = clip of 0 onto the interval P in [p_min, p_max]
            lo = (p_max - g2 * s0 - base) / g1
            hi = (p_min - g2 * s0 - base) / g1
            lo, hi = min(lo, hi), max(lo, hi)
            lo, hi = max(lo, -1.0), min(hi, 1.0)
            expect = min(max(0.0, lo), hi)
            assert sched.s_traj[1] == pytest.approx(expect, abs=1e-5)


class TestRollingConsistency:
    def test_tail_reproduced_without_disturbance(self):
        m = toy_model(start=5, horizon=4)
        energy = np.full(24, 0.05)
        energy[6] = 0.11
        pr = MarketPrices(energy, np.full(24, 0.01), np.full(24, 0.002))
        full = solve_dual_market(m, pr)
        # re-solve one hour later from the realized (predicted) state
        m2 = AggregateModel(6, m.g_next[1:], m.g_now[1:], m.base[1:],
                            m.p_min[1:], m.p_max[1:], float(full.s_traj[1]))
        tail = solve_dual_market(m2, pr)
        assert tail.p_sch == pytest.approx(full.p_sch[1:], abs=1e-3)
        assert tail.c_reg == pytest.approx(full.c_reg[1:], abs=1e-3)


class TestDegenerateModel:
    def test_empty_fleet_zero_model(self):
        # no devices at all: the zero model must still solve cleanly
        H = 3
        m = AggregateModel(0, np.zeros(H), np.zeros(H), np.zeros(H),
                           np.zeros(H), np.zeros(H), 0.0)
        for sched in (solve_baseline(m),
                      solve_energy_only(m, flat_prices()),
                      solve_dual_market(m, flat_prices(cap=0.02, mile=0.004))):
            assert np.allclose(sched.p_sch, 0.0, atol=1e-6)
            assert np.all(sched.c_reg == 0.0)

    def test_empty_hour_inside_horizon(self):
        # one hour with no members (all EVs away) inside a normal horizon
        m = toy_model(horizon=3)
        for arr in (m.g_next, m.g_now, m.base, m.p_min, m.p_max):
            arr[1] = 0.0
        sched = solve_dual_market(m, flat_prices(cap=0.02, mile=0.004))
        assert sched.p_sch[1] == pytest.approx(0.0, abs=1e-6)
        assert sched.c_reg[1] == 0.0
        assert max(sched.kkt.values()) < 1e-6


class TestInfeasible:
    def test_crossed_limits_name_the_hour(self):
        m = toy_model(horizon=3)
        m.p_min[1] = 2000.0    # above p_max
        with pytest.raises(InfeasibleError) as err:
            solve_energy_only(m, flat_prices())
        assert err.value.hour == 1

    def test_unreachable_power_band(self):
        # limits fine individually, but the dynamics cannot reach the band
        m = toy_model(horizon=2, base=0.0, p_min=5000.0, p_max=6000.0)
        with pytest.raises(InfeasibleError):
            solve_energy_only(m, flat_prices())
