"""Dense convex quadratic programming by a primal-dual interior-point method.

Solves   minimize  0.5 x'Qx + c'x   subject to  G x <= h

for the small problem sizes this package produces (tens of variables, at
most a few hundred inequality rows).  A feasibility pre-phase (a phase-1 LP
maximizing the constraint margin) certifies that a strictly feasible point
exists and supplies the interior starting point; the main phase is a
Mehrotra predictor-corrector iteration whose Newton steps solve the
augmented quasidefinite KKT system by dense LU.

No equality constraints: callers eliminate them ahead of time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QpInfeasible(Exception):
    """The inequality system has no interior; carries the most violated row."""

    def __init__(self, row: int, violation: float):
        super().__init__(f"infeasible inequality system (worst row {row}, "
                         f"violation {violation:.3e})")
        self.row = row
        self.violation = violation


class QpNumericalError(Exception):
    pass


@dataclass
class QpResult:
    x: np.ndarray          # primal solution
    z: np.ndarray          # multipliers of G x <= h, nonnegative
    iterations: int
    residuals: dict        # stationarity / primal / complementarity, inf-norms


def kkt_residuals(Q, c, G, h, x, z) -> dict:
    """Inf-norm KKT residuals of the inequality-constrained QP."""
    slack = h - G @ x
    return {
        "stationarity": float(np.max(np.abs(Q @ x + c + G.T @ z), initial=0.0)),
        "primal": float(np.max(-slack, initial=0.0)),
        "dual": float(np.max(-z, initial=0.0)),
        "complementarity": float(np.max(np.abs(z * slack), initial=0.0)),
    }


def _pdip(Q, c, G, h, x, s, z, tol, max_iter):
    """Mehrotra predictor-corrector core. Starts from s, z > 0."""
    m, n = G.shape
    for it in range(max_iter):
        r_d = Q @ x + c + G.T @ z
        r_p = G @ x + s - h
        mu = float(z @ s) / m
        if (np.max(np.abs(r_d), initial=0.0) < tol
                and np.max(np.abs(r_p), initial=0.0) < tol and mu < tol):
            return x, s, z, it
        d = s / z
        # augmented (quasidefinite) KKT system; LU keeps its accuracy where
        # the normal-equations reduction would square the conditioning
        K = np.zeros((n + m, n + m))
        K[:n, :n] = Q
        K[np.diag_indices(n)] += 1e-11
        K[:n, n:] = G.T
        K[n:, :n] = G
        K[n + np.arange(m), n + np.arange(m)] = -d - 1e-11

        def solve_newton(t):
            # t is the complementarity target divided by z
            rhs = np.concatenate([-r_d, t - r_p])
            sol = np.linalg.solve(K, rhs)
            dx, dz = sol[:n], sol[n:]
            ds = -t - d * dz
            return dx, ds, dz

        # predictor (affine) step
        dx_a, ds_a, dz_a = solve_newton(s)
        a_p = _max_step(s, ds_a)
        a_d = _max_step(z, dz_a)
        mu_aff = float((z + a_d * dz_a) @ (s + a_p * ds_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector step
        t = s + (ds_a * dz_a - sigma * mu) / z
        dx, ds, dz = solve_newton(t)
        a_p = min(1.0, 0.99 * _max_step(s, ds))
        a_d = min(1.0, 0.99 * _max_step(z, dz))
        x = x + a_p * dx
        s = s + a_p * ds
        z = z + a_d * dz
    # tolerate a graceful finish if the residuals are already tiny
    r_d = Q @ x + c + G.T @ z
    r_p = G @ x + s - h
    mu = float(z @ s) / m
    if max(np.max(np.abs(r_d), initial=0.0), np.max(np.abs(r_p), initial=0.0), mu) < 1e3 * tol:
        return x, s, z, max_iter
    raise QpNumericalError(f"interior point did not converge "
                           f"(mu={mu:.2e}, rd={np.max(np.abs(r_d)):.2e})")


def _max_step(v, dv):
    """Largest alpha in (0, 1] keeping v + alpha*dv positive."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _phase1(G, h, tol):
    """Maximize the feasibility margin: min t  s.t.  Gx - t <= h.

    Returns a strictly feasible x for the original rows, or raises
    :class:`QpInfeasible` naming the most violated row.
    """
    m, n = G.shape
    G1 = np.hstack([G, -np.ones((m, 1))])
    c1 = np.zeros(n + 1)
    c1[-1] = 1.0
    Q1 = np.zeros((n + 1, n + 1))
    Q1[np.diag_indices_from(Q1)] = 1e-9   # tiny curvature keeps the LP bounded
    x0 = np.zeros(n + 1)
    x0[-1] = float(np.max(-h, initial=0.0)) + 1.0
    s0 = h - G1 @ x0
    z0 = np.ones(m)
    x1, _, _, _ = _pdip(Q1, c1, G1, h, x0, s0, z0, tol=1e-9, max_iter=80)
    t_star = x1[-1]
    x_feas = x1[:-1]
    slack = h - G @ x_feas
    if t_star > -1e-9 and np.min(slack) <= 0:
        worst = int(np.argmin(h - G @ x_feas))
        raise QpInfeasible(worst, float(-(h - G @ x_feas)[worst]))
    return x_feas, slack


def solve_qp(Q, c, G, h, tol: float = 1e-10, max_iter: int = 100) -> QpResult:
    """Solve the inequality-constrained convex QP.

    Raises :class:`QpInfeasible` when no strictly feasible point exists.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = G.shape
    if m == 0:
        x = np.linalg.solve(Q + 1e-12 * np.eye(n), -c)
        return QpResult(x, np.zeros(0), 0, kkt_residuals(Q, c, G, h, x, np.zeros(0)))

    x0, slack = _phase1(G, h, tol)
    s0 = np.maximum(slack, 1e-6)
    z0 = np.ones(m)
    x, s, z, it = _pdip(Q, c, G, h, x0, s0, z0, tol=tol, max_iter=max_iter)
    z = np.maximum(z, 0.0)
    return QpResult(x, z, it, kkt_residuals(Q, c, G, h, x, z))
