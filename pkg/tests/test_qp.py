import numpy as np
import pytest

from gescoord.qp import QpInfeasible, kkt_residuals, solve_qp


def box(n, lo, hi):
    G = np.vstack([np.eye(n), -np.eye(n)])
    h = np.concatenate([np.full(n, hi), np.full(n, -lo)])
    return G, h


class TestSolveQp:
    def test_unconstrained_interior_minimum(self):
        # min (x-1)^2 + (y+2)^2 inside a generous box
        Q = 2 * np.eye(2)
        c = np.array([-2.0, 4.0])
        G, h = box(2, -10, 10)
        res = solve_qp(Q, c, G, h)
        assert res.x == pytest.approx([1.0, -2.0], abs=1e-7)
        assert max(res.residuals.values()) < 1e-6

    def test_active_box(self):
        # minimum at x=3 pushed against the bound x<=2
        Q = np.array([[2.0]])
        c = np.array([-6.0])
        G, h = box(1, -5, 2)
        res = solve_qp(Q, c, G, h)
        assert res.x[0] == pytest.approx(2.0, abs=1e-8)
        assert res.z[0] > 1e-6                       # bound multiplier active
        assert max(res.residuals.values()) < 1e-6

    def test_lp_like_zero_curvature(self):
        # pure LP in one variable: min -x st x <= 4
        Q = np.zeros((1, 1))
        c = np.array([-1.0])
        G, h = box(1, 0, 4)
        res = solve_qp(Q, c, G, h)
        assert res.x[0] == pytest.approx(4.0, abs=1e-7)

    def test_coupled_rows(self):
        # min x^2 + y^2 st x + y >= 2  ->  x=y=1
        Q = 2 * np.eye(2)
        c = np.zeros(2)
        G = np.vstack([[-1.0, -1.0], np.eye(2), -np.eye(2)])
        h = np.concatenate([[-2.0], np.full(2, 10.0), np.full(2, 10.0)])
        res = solve_qp(Q, c, G, h)
        assert res.x == pytest.approx([1.0, 1.0], abs=1e-7)

    def test_infeasible_raises_with_row(self):
        # x <= 1 and -x <= -3 cannot both hold
        Q = np.eye(1)
        c = np.zeros(1)
        G = np.array([[1.0], [-1.0]])
        h = np.array([1.0, -3.0])
        with pytest.raises(QpInfeasible):
            solve_qp(Q, c, G, h)

    def test_random_qps_against_projection(self, rng):
        # random strongly convex QPs with box constraints; verify KKT and
        # compare with a projected-gradient reference solve
        for _ in range(25):
            n = int(rng.integers(2, 8))
            A = rng.normal(size=(n, n))
            Q = A @ A.T + np.eye(n)
            c = rng.normal(size=n)
            G, h = box(n, -1.0, 1.0)
            res = solve_qp(Q, c, G, h)
            assert max(res.residuals.values()) < 1e-6
            x = np.zeros(n)
            step = 1.0 / np.linalg.norm(Q, 2)
            for _ in range(20000):
                x = np.clip(x - step * (Q @ x + c), -1.0, 1.0)
            f_ip = 0.5 * res.x @ Q @ res.x + c @ res.x
            f_pg = 0.5 * x @ Q @ x + c @ x
            assert f_ip <= f_pg + 1e-6

    def test_kkt_residual_helper(self):
        Q = 2 * np.eye(1)
        c = np.array([-2.0])
        G, h = box(1, -5, 5)
        r = kkt_residuals(Q, c, G, h, np.array([1.0]), np.zeros(2))
        assert max(r.values()) < 1e-12
