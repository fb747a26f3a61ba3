"""Hourly rolling programs: dual-market allocation, energy-only, baseline.

All three share the same backbone: decision variables are the fleet state at
each hour boundary (the scheduled power is eliminated through the fleet
dynamics) plus, in the dual-market case, the contracted regulation capacity
per hour.  The result is a small dense convex QP handed to the in-package
interior-point solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregate import AggregateModel
from .qp import QpInfeasible, kkt_residuals, solve_qp

HOURS_PER_DAY = 24


class InfeasibleError(Exception):
    """The hourly program cannot be satisfied; names the offending hour."""

    def __init__(self, hour: int, detail: str):
        super().__init__(f"hour {hour}: {detail}")
        self.hour = hour
        self.detail = detail


@dataclass(frozen=True)
class MarketPrices:
    energy: np.ndarray        # $/kWh, one entry per hour of the day
    capacity: np.ndarray      # $/kW per hour of contracted capacity
    mileage: np.ndarray       # $/kW per unit of hourly mileage
    score_estimate: float = 0.92
    mileage_estimate: float = 2.7
    penalty_scale: float = 0.1

    def __post_init__(self):
        for name in ("energy", "capacity", "mileage"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.size != HOURS_PER_DAY:
                raise ValueError(f"{name} price series must have 24 hourly entries")
            if np.any(arr < 0):
                raise ValueError(f"{name} prices must be nonnegative")
        if not 0.0 <= self.score_estimate <= 1.0:
            raise ValueError("score_estimate must lie in [0, 1]")

    @property
    def energy_mean(self) -> float:
        """Daily average energy price, fixed once per day."""
        return float(self.energy.mean())

    def regulation_payoff(self) -> np.ndarray:
        """Expected $ per kW of capacity per hour (capacity plus mileage)."""
        return self.score_estimate * (self.capacity
                                      + self.mileage * self.mileage_estimate)


@dataclass
class Schedule:
    mode: str
    start_hour: int
    p_sch: np.ndarray         # kW per hour of the horizon
    c_reg: np.ndarray         # kW per hour (zeros outside dual-market mode)
    s_traj: np.ndarray        # fleet state at hour boundaries, length H+1
    objective: float
    terms: dict
    kkt: dict
    problem: dict = field(default_factory=dict, repr=False)

    @property
    def horizon(self) -> int:
        return self.p_sch.size


def penalty(s: float, hour: int, prices: MarketPrices, limits) -> float:
    """Discomfort cost of holding the fleet state at ``s`` for one hour."""
    p_min, p_max = limits
    return prices.penalty_scale * prices.energy_mean * s * s * (p_max - p_min)


def solve_dual_market(model: AggregateModel, prices: MarketPrices) -> Schedule:
    """Split fleet flexibility between the energy and regulation markets."""
    return _solve(model, prices, mode="dual_market")


def solve_energy_only(model: AggregateModel, prices: MarketPrices) -> Schedule:
    """Schedule against the energy price alone."""
    return _solve(model, prices, mode="energy_only")


def solve_baseline(model: AggregateModel) -> Schedule:
    """Estimate uncoordinated fleet consumption: the minimum-state schedule."""
    return _solve(model, None, mode="baseline")


def _solve(model: AggregateModel, prices, mode: str) -> Schedule:
    H = model.horizon
    if H == 0:
        raise ValueError("empty horizon")
    hours = model.start_hour + np.arange(H)
    g1, g2, g3 = model.g_next, model.g_now, model.base
    p_min, p_max = model.p_min, model.p_max
    bad = np.nonzero(p_min > p_max + 1e-9)[0]
    if bad.size:
        h = int(hours[bad[0]])
        raise InfeasibleError(h, f"fleet power limits cross (min {p_min[bad[0]]:.3f} "
                                 f"> max {p_max[bad[0]]:.3f} kW)")

    dual = mode == "dual_market"
    if dual:
        payoff = prices.regulation_payoff()[hours]
        # a C variable exists only where capacity can pay and physically fit
        c_hours = np.nonzero((payoff > 0.0) & (p_max - p_min > 1e-9))[0]
    else:
        payoff = np.zeros(H)
        c_hours = np.empty(0, dtype=int)
    n_s, n_c = H, c_hours.size
    n = n_s + n_c
    c_pos = {int(k): n_s + j for j, k in enumerate(c_hours)}

    # objective: 0.5 x'Qx + c'x (constant parts drop out of the argmin and
    # are restored when the solved schedule is priced below)
    Q = np.zeros((n, n))
    cvec = np.zeros(n)
    if mode == "baseline":
        Q[np.diag_indices(n_s)] = 2.0
    else:
        mu_e = prices.energy[hours]
        w_pen = prices.penalty_scale * prices.energy_mean * (p_max - p_min)
        Q[np.diag_indices(n_s)] = 2.0 * w_pen
        # energy bill: sum_h mu_e[h] * P_h with P_h affine in the states
        for k in range(H):
            cvec[k] += mu_e[k] * g1[k]
            if k + 1 < H:
                cvec[k] += mu_e[k + 1] * g2[k + 1]
        for k, j in c_pos.items():
            cvec[j] = -payoff[k]

    # constraints
    rows, rhs, labels = [], [], []

    def add(row, b, label):
        rows.append(row)
        rhs.append(b)
        labels.append(label)

    for k in range(n_s):
        e = np.zeros(n); e[k] = 1.0
        add(e, 1.0, ("state_ub", int(hours[k])))
        add(-e, 1.0, ("state_lb", int(hours[k])))
    for k in range(H):
        row = np.zeros(n)
        row[k] = g1[k]
        offset = g3[k]
        if k == 0:
            offset += g2[0] * model.s_init
        else:
            row[k - 1] = g2[k]
        j = c_pos.get(k)
        up, lo = row.copy(), -row
        if j is not None:
            up[j] = 1.0
            lo[j] = 1.0
        add(up, p_max[k] - offset, ("power_max", int(hours[k])))
        add(lo, offset - p_min[k], ("power_min", int(hours[k])))
    for k, j in c_pos.items():
        e = np.zeros(n); e[j] = -1.0
        add(e, 0.0, ("capacity_nonneg", int(hours[k])))

    G = np.array(rows)
    h_vec = np.array(rhs)
    # degenerate hours (e.g. an empty fleet) produce all-zero rows: trivially
    # true when the bound allows zero, otherwise a plain infeasibility
    zero_rows = np.max(np.abs(G), axis=1) <= 1e-14
    for i in np.nonzero(zero_rows)[0]:
        if h_vec[i] < -1e-9:
            raise InfeasibleError(labels[i][1],
                                  f"constraint '{labels[i][0]}' unsatisfiable "
                                  f"with no responsive devices")
    keep = ~zero_rows
    G, h_vec = G[keep], h_vec[keep]
    labels = [lab for lab, k in zip(labels, keep) if k]
    try:
        res = solve_qp(Q, cvec, G, h_vec)
    except QpInfeasible as exc:
        label, hour = labels[exc.row]
        raise InfeasibleError(hour, f"constraint '{label}' admits no feasible "
                                    f"schedule (margin {exc.violation:.3e})") from exc

    s_traj = np.concatenate([[model.s_init], res.x[:n_s]])
    c_reg = np.zeros(H)
    for k, j in c_pos.items():
        c_reg[k] = max(res.x[j], 0.0)
    p_sch = g1 * s_traj[1:] + g2 * s_traj[:-1] + g3

    # lift the solution onto the full problem (fixed C variables restored)
    # so the KKT audit covers exactly the program as specified
    Qf, cf, Gf, hf, xf, zf = _lift_full(
        mode, model, hours, Q, cvec, G, h_vec, labels, res, payoff,
        c_pos, c_reg)
    kkt = kkt_residuals(Qf, cf, Gf, hf, xf, zf)

    if mode == "baseline":
        terms = {"state_cost": float(np.sum(s_traj ** 2))}
        objective = terms["state_cost"]
    else:
        bill = float(np.dot(prices.energy[hours], p_sch))
        cap = float(np.dot(prices.score_estimate * prices.capacity[hours], c_reg))
        mil = float(np.dot(prices.score_estimate * prices.mileage[hours]
                           * prices.mileage_estimate, c_reg))
        pen = float(np.dot(prices.penalty_scale * prices.energy_mean
                           * (p_max - p_min), s_traj[1:] ** 2))
        terms = {"energy_bill": bill, "capacity_revenue": cap,
                 "mileage_revenue": mil, "penalty": pen}
        objective = bill - cap - mil + pen

    problem = {"Q": Qf, "c": cf, "G": Gf, "h": hf, "x": xf, "z": zf,
               "labels": labels}
    return Schedule(mode=mode, start_hour=model.start_hour, p_sch=p_sch,
                    c_reg=c_reg, s_traj=s_traj, objective=objective,
                    terms=terms, kkt=kkt, problem=problem)


def _lift_full(mode, model, hours, Q, cvec, G, h_vec, labels, res,
               payoff, c_pos, c_reg):
    """Restore presolve-fixed capacity variables into the audited system.

    Hours whose regulation payoff is nonpositive never pay for capacity, so
    C was fixed at zero before the solve; stationarity for those variables
    holds with the nonnegativity multiplier set to the payoff deficit plus
    the limit-row multipliers, which is nonnegative by construction.
    """
    dual = mode == "dual_market"
    if not dual:
        return Q, cvec, G, h_vec, res.x, res.z
    H = model.horizon
    fixed = [k for k in range(H) if k not in c_pos]
    if not fixed:
        return Q, cvec, G, h_vec, res.x, res.z
    n_s = H
    n_full = n_s + H
    m_old = G.shape[0]
    Qf = np.zeros((n_full, n_full))
    Qf[:n_s, :n_s] = Q[:n_s, :n_s]
    cf = np.zeros(n_full)
    cf[:n_s] = cvec[:n_s]
    col_of = {k: n_s + k for k in range(H)}
    for k, j in c_pos.items():
        cf[col_of[k]] = cvec[j]
    for k in fixed:
        cf[col_of[k]] = -payoff[k]

    row_of = {(lab, hr): i for i, (lab, hr) in enumerate(labels)}
    # hours whose power rows were dropped as degenerate need them restored to
    # certify the fixed capacity variable
    missing = [k for k in fixed if ("power_max", int(hours[k])) not in row_of]
    m_full = m_old + len(fixed) + len(missing)
    Gf = np.zeros((m_full, n_full))
    Gf[:m_old, :n_s] = G[:, :n_s]
    for k, j in c_pos.items():
        Gf[:m_old, col_of[k]] = G[:, j]
    hf = np.zeros(m_full)
    hf[:m_old] = h_vec
    zf = np.zeros(m_full)
    zf[:m_old] = res.z
    extra = m_old + len(fixed)
    for idx, k in enumerate(fixed):
        col = col_of[k]
        hr = int(hours[k])
        if ("power_max", hr) in row_of:
            up = row_of[("power_max", hr)]
            lo = row_of[("power_min", hr)]
            Gf[up, col] = 1.0
            Gf[lo, col] = 1.0
            z_up, z_lo = res.z[up], res.z[lo]
        else:
            # restore the upper limit row (it was 0 <= 0 in the solved system)
            up = extra
            extra += 1
            Gf[up, k] = model.g_next[k]
            if k > 0:
                Gf[up, k - 1] = model.g_now[k]
            Gf[up, col] = 1.0
            offset = model.base[k] + (model.g_now[0] * model.s_init if k == 0 else 0.0)
            hf[up] = model.p_max[k] - offset
            z_up = zf[up] = max(payoff[k], 0.0)
            z_lo = 0.0
        r = m_old + idx
        Gf[r, col] = -1.0
        zf[r] = max(0.0, -payoff[k] + z_up + z_lo)
    xf = np.zeros(n_full)
    xf[:n_s] = res.x[:n_s]
    for k in range(H):
        xf[col_of[k]] = c_reg[k]
    return Qf, cf, Gf, hf, xf, zf


def dump_instance(schedule: Schedule, path) -> None:
    """Write a solved instance (matrices, solution, residuals) for offline audit."""
    import json

    data = {
        "mode": schedule.mode,
        "start_hour": schedule.start_hour,
        "objective": schedule.objective,
        "terms": schedule.terms,
        "kkt": schedule.kkt,
        "p_sch": schedule.p_sch.tolist(),
        "c_reg": schedule.c_reg.tolist(),
        "s_traj": schedule.s_traj.tolist(),
    }
    for key in ("Q", "c", "G", "h", "x", "z"):
        if key in schedule.problem:
            data[key] = np.asarray(schedule.problem[key]).tolist()
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)
