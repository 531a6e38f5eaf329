"""Independent solution verification and exhaustive micro-instance solving.

Everything here re-derives the model's relations directly from instance
data, sharing no constraint-construction code with the model builder, so
it can referee solutions produced through that path:

* :func:`check_solution` re-evaluates every constraint group and the
  objective at a candidate assignment and reports worst violations.
* :func:`evaluate_variance_direct` computes the weekly-loss variance on
  its own algebraic path (probability-weighted squared deviations from
  the weighted mean) for cross-checking the risk module.
* :func:`brute_force_micro` exhaustively enumerates the discrete
  structure of a small instance (batch starts, cleaning days, warehouse
  activity, mode choices, vehicle counts, loss-week indicators), solves
  the continuous remainder of each leaf exactly (LP, escalating to a
  convex QCQP when the variance cap binds) and returns the true optimum,
  refusing instances whose enumeration would exceed its budget.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from agrochain.formulation import VarKey
from agrochain.instance import DAYS_PER_WEEK, Instance

__all__ = [
    "GroupCheck",
    "VerificationReport",
    "check_solution",
    "evaluate_variance_direct",
    "BruteForceResult",
    "BudgetExceededError",
    "brute_force_micro",
    "ENUMERATION_BUDGET",
]

ENUMERATION_BUDGET = 2**20

BINARY_FAMILIES = frozenset(
    {"alpha", "alpha_start", "alpha_clean", "beta", "delta", "lambda_pw", "lambda_wk"}
)
INTEGER_FAMILIES = frozenset({"u_pw", "u_wk", "v_pw", "v_wk"})


def evaluate_variance_direct(losses, probabilities) -> float:
    """Variance of weekly loss: probability-weighted squared deviation from
    the weighted scenario mean, averaged over weeks."""
    xs = np.asarray(losses, dtype=float)
    rho = np.asarray(probabilities, dtype=float)
    if xs.ndim != 2:
        raise ValueError("losses must be a (weeks, scenarios) matrix")
    means = xs @ rho
    dev = xs - means[:, None]
    return float(np.mean((dev**2) @ rho))


@dataclass
class GroupCheck:
    group: str
    n_checked: int
    worst: float
    tol: float = 1e-6

    @property
    def ok(self) -> bool:
        return self.worst <= self.tol


@dataclass
class VerificationReport:
    groups: list[GroupCheck]
    variance: float
    variance_cap: float
    loss_total: float
    loss_matrix: np.ndarray
    objective_recomputed: float
    objective_reported: float | None
    tol: float

    @property
    def objective_ok(self) -> bool:
        if self.objective_reported is None:
            return True
        return abs(self.objective_reported - self.objective_recomputed) <= self.tol * (
            1.0 + abs(self.objective_recomputed)
        )

    @property
    def ok(self) -> bool:
        return all(g.ok for g in self.groups) and self.objective_ok

    def render(self) -> str:
        lines = ["solution verification", "---------------------"]
        for g in self.groups:
            verdict = "ok" if g.ok else "VIOLATED"
            lines.append(
                f"  {g.group:<22} checks={g.n_checked:<6} worst={g.worst:.3e}  {verdict}"
            )
        lines.append(f"  weekly-loss variance: {self.variance:.9g} (cap {self.variance_cap:g})")
        lines.append(f"  total loss (all weeks/scenarios): {self.loss_total:.9g}")
        lines.append(f"  objective recomputed: {self.objective_recomputed:.6f}")
        if self.objective_reported is not None:
            status = "ok" if self.objective_ok else "MISMATCH"
            lines.append(
                f"  objective reported:   {self.objective_reported:.6f}  {status}"
            )
        lines.append(f"verdict: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def check_solution(
    inst: Instance,
    values,
    reported_objective: float | None = None,
    tol: float = 1e-6,
) -> VerificationReport:
    """Re-evaluate every constraint group at a candidate assignment.

    ``values`` maps VarKeys to numbers; missing keys count as 0. Violations
    are scaled by 1 + |constant side| before comparison against ``tol``.
    """
    T, S = inst.n_days, inst.n_scenarios
    L, C = inst.batch_days, inst.cleaning_days
    I, J, K = inst.n_plants, inst.n_warehouses, inst.n_markets
    rho = inst.probabilities

    def V(fam, *idx) -> float:
        return float(values.get(VarKey(fam, idx), 0.0))

    groups: list[GroupCheck] = []

    def add(group: str, viols: list[float]):
        groups.append(GroupCheck(group, len(viols), max(viols, default=0.0), tol=tol))

    # integral domains
    viols = []
    for key, val in values.items():
        fam = key.family
        if fam in BINARY_FAMILIES:
            viols.append(max(abs(val - round(val)), -val, val - 1.0))
        elif fam in INTEGER_FAMILIES:
            viols.append(abs(val - round(val)))
    add("integrality", viols)

    # production windows and batch activity
    win, cover, overlap = [], [], []
    for i, plant in enumerate(inst.plants, start=1):
        for s in range(1, S + 1):
            for t0 in range(1, T - L + 2):
                a = V("alpha_start", i, t0, s)
                xv = V("x", i, t0 + L - 1, s)
                win.append(
                    (plant.normal_batch_capacity * a - xv)
                    / (1.0 + plant.normal_batch_capacity)
                )
                win.append(
                    (xv - plant.max_batch_capacity * a)
                    / (1.0 + plant.max_batch_capacity)
                )
                for tau in range(t0, t0 + L):
                    cover.append(a - V("alpha", i, tau, s))
                for tau in range(t0 + 1, t0 + L):
                    overlap.append(a + V("alpha_start", i, tau, s) - 1.0)
            # activity without a covering start is model-feasible (it only
            # adds fixed cost), so no converse check belongs here
            for t in range(1, min(L - 1, T) + 1):
                win.append(V("x", i, t, s) / (1.0 + plant.max_batch_capacity))
            for t in range(T - L + 2, T + 1):
                win.append(V("alpha_start", i, t, s))
    add("production-window", win)
    add("activity-cover", cover)
    add("start-overlap", overlap)

    # cleaning counts and exclusions
    count, excl = [], []
    for i, plant in enumerate(inst.plants, start=1):
        B = plant.batches_before_cleaning
        for s in range(1, S + 1):
            for t in range(1, T - L + 1):
                starts = sum(V("alpha_start", i, tau, s) for tau in range(1, t + 1))
                cleans = sum(V("alpha_clean", i, tau, s) for tau in range(1, t + L + 1))
                count.append(cleans - starts / B)
                count.append(starts / B - cleans - (1.0 - 1.0 / B))
            for t in range(1, T + 1):
                cl = V("alpha_clean", i, t, s)
                excl.append(cl + V("alpha_start", i, t, s) - 1.0)
                for tau in range(t, min(t + C - 1, T) + 1):
                    excl.append(cl + V("alpha", i, tau, s) - 1.0)
    add("cleaning-count", count)
    add("cleaning-exclusion", excl)

    # plant inventory balance
    bal = []
    for i, plant in enumerate(inst.plants, start=1):
        for s in range(1, S + 1):
            prev = plant.initial_inventory
            for t in range(1, T + 1):
                cur = V("inv", i, t, s)
                shipped = sum(V("y", i, j, t, s) for j in range(1, J + 1))
                bal.append(
                    abs(cur - prev - V("x", i, t, s) + shipped) / (1.0 + abs(prev))
                )
                bal.append(-cur)
                prev = cur
    add("plant-balance", bal)

    # transport echelons: product consistency, capacity windows, mode choice
    for ech, links, flow_fam in (
        ("pw", [(i, j) for i in range(1, I + 1) for j in range(1, J + 1)], "y"),
        ("wk", [(j, k) for j in range(1, J + 1) for k in range(1, K + 1)], "p"),
    ):
        prod, capv, mode_rows = [], [], []
        for a, b in links:
            for t in range(1, T + 1):
                for s in range(1, S + 1):
                    total_o = 0.0
                    lam_sum = 0.0
                    for m, mode in enumerate(inst.modes, start=1):
                        lam = V(f"lambda_{ech}", a, b, m, t, s)
                        u = V(f"u_{ech}", a, b, m, t, s)
                        v = V(f"v_{ech}", a, b, m, t, s)
                        o = V(f"o_{ech}", a, b, m, t, s)
                        umax = mode.max_vehicles_per_link_day
                        prod.append(abs(v - lam * u) / (1.0 + umax))
                        capv.append(max(-u, u - umax) / (1.0 + umax))
                        capv.append(
                            (mode.min_vehicle_capacity * v - o)
                            / (1.0 + mode.min_vehicle_capacity * umax)
                        )
                        capv.append(
                            (o - mode.max_vehicle_capacity * v)
                            / (1.0 + mode.max_vehicle_capacity * umax)
                        )
                        total_o += o
                        lam_sum += lam
                    fl = V(flow_fam, a, b, t, s)
                    capv.append(abs(total_o - fl) / (1.0 + abs(fl)))
                    capv.append(-fl)
                    mode_rows.append(abs(lam_sum - 1.0))
        add(f"transport-{ech}", capv)
        add(f"product-{ech}", prod)
        add(f"mode-choice-{ech}", mode_rows)

    # warehouse gating and balance
    wh = []
    for j, w in enumerate(inst.warehouses, start=1):
        for s in range(1, S + 1):
            prev = w.initial_storage
            for t in range(1, T + 1):
                cur = V("w", j, t, s)
                wh.append((cur - w.max_capacity * V("beta", j, t, s)) / (1.0 + w.max_capacity))
                inflow = sum(V("y", i, j, t, s) for i in range(1, I + 1))
                outflow = sum(V("p", j, k, t, s) for k in range(1, K + 1))
                wh.append(abs(cur - prev - inflow + outflow) / (1.0 + abs(prev)))
                wh.append(-cur)
                prev = cur
    add("warehouse", wh)

    # weekly aggregation, demand balance, loss definition
    weekly, caps = [], []
    loss_matrix = np.zeros((inst.n_weeks, S))
    for tp in range(1, inst.n_weeks + 1):
        for s in range(1, S + 1):
            for j in range(1, J + 1):
                for k in range(1, K + 1):
                    agg = sum(
                        V("p", j, k, DAYS_PER_WEEK * (tp - 1) + tau, s)
                        for tau in range(1, DAYS_PER_WEEK + 1)
                    )
                    weekly.append(
                        abs(V("bigP", j, k, tp, s) - agg) / (1.0 + abs(agg))
                    )
            slack_sum = 0.0
            for k in range(1, K + 1):
                d = inst.demand(k, tp, s)
                delivered = sum(V("bigP", j, k, tp, s) for j in range(1, J + 1))
                sl = V("slack", k, tp, s)
                weekly.append(abs(delivered + sl - d) / (1.0 + abs(d)))
                weekly.append(-sl)
                slack_sum += sl
            lv = V("loss", tp, s)
            weekly.append(abs(lv - slack_sum) / (1.0 + abs(slack_sum)))
            loss_matrix[tp - 1, s - 1] = lv
            cap = inst.weekly_loss_cap(tp)
            caps.append((lv - cap * V("delta", tp)) / (1.0 + cap))
    caps.append(
        (sum(V("delta", tp) for tp in range(1, inst.n_weeks + 1)) - inst.max_loss_weeks)
        / (1.0 + inst.max_loss_weeks)
    )
    add("weekly-demand", weekly)
    add("loss-caps", caps)

    variance = evaluate_variance_direct(loss_matrix, rho)
    if math.isfinite(inst.variance_cap):
        add("variance", [(variance - inst.variance_cap) / (1.0 + inst.variance_cap)])
    else:
        add("variance", [0.0])

    # objective recomputation
    obj = 0.0
    for s in range(1, S + 1):
        r = rho[s - 1]
        for t in range(1, T + 1):
            for i, plant in enumerate(inst.plants, start=1):
                obj += r * (
                    plant.fixed_cost * V("alpha", i, t, s)
                    + plant.variable_cost * V("x", i, t, s)
                    + plant.holding_cost * V("inv", i, t, s)
                )
            for j, w in enumerate(inst.warehouses, start=1):
                obj += r * (
                    w.fixed_cost * V("beta", j, t, s)
                    + w.holding_cost * V("w", j, t, s)
                )
            for m, mode in enumerate(inst.modes, start=1):
                ship = 0.0
                for i in range(1, I + 1):
                    for j in range(1, J + 1):
                        ship += V("u_pw", i, j, m, t, s)
                for j in range(1, J + 1):
                    for k in range(1, K + 1):
                        ship += V("u_wk", j, k, m, t, s)
                obj += r * mode.shipping_cost * ship
        for tp in range(1, inst.n_weeks + 1):
            obj += r * inst.loss_cost_per_week[tp - 1] * V("loss", tp, s)

    return VerificationReport(
        groups=groups,
        variance=variance,
        variance_cap=inst.variance_cap,
        loss_total=float(np.sum(loss_matrix)),
        loss_matrix=loss_matrix,
        objective_recomputed=obj,
        objective_reported=reported_objective,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# exhaustive enumeration of micro instances
# ---------------------------------------------------------------------------


class BudgetExceededError(RuntimeError):
    """Enumeration would exceed the allowed combination budget."""

    def __init__(self, log10_count: float, budget: int):
        self.log10_count = log10_count
        self.count = 10.0**log10_count if log10_count < 300 else math.inf
        self.budget = budget
        shown = (
            f"{self.count:.3g}" if math.isfinite(self.count) else f"about 10^{log10_count:.0f}"
        )
        super().__init__(
            f"enumeration needs {shown} combinations, over the budget of {budget}"
        )


@dataclass
class BruteForceResult:
    status: str  # "optimal" | "infeasible"
    objective: float | None
    values: dict[VarKey, float] | None
    n_leaves: int
    n_feasible: int
    n_qcqp: int


def _start_patterns(T: int, L: int) -> list[tuple[int, ...]]:
    """All start-day sets in 1..T-L+1 with pairwise gaps >= L."""
    last = T - L + 1
    out: list[tuple[int, ...]] = []

    def rec(day: int, chosen: tuple[int, ...]):
        if day > last:
            out.append(chosen)
            return
        rec(day + 1, chosen)  # skip
        rec(day + L, chosen + (day,))  # start here; next start >= day+L

    rec(1, ())
    return out


def _alpha_days(starts: tuple[int, ...], T: int, L: int) -> set[int]:
    days: set[int] = set()
    for t0 in starts:
        days.update(range(t0, min(t0 + L - 1, T) + 1))
    return days


def _clean_patterns(
    starts: tuple[int, ...], T: int, L: int, C: int, B: int
) -> list[tuple[int, ...]]:
    """All cleaning-day sets consistent with the count and exclusion rules
    for a given start pattern."""
    alpha = _alpha_days(starts, T, L)
    start_set = set(starts)
    allowed = [
        t
        for t in range(1, T + 1)
        if t not in start_set
        and not any(tau in alpha for tau in range(t, min(t + C - 1, T) + 1))
    ]
    # prefix windows: for t <= T-L, cleans in 1..t+L confined to
    # [ceil((starts<=t - B + 1)/B), floor(starts<=t / B)]
    prefix = []
    for t in range(1, T - L + 1):
        n_start = sum(1 for t0 in starts if t0 <= t)
        lo = max(0, math.ceil((n_start - B + 1) / B))
        hi = n_start // B
        prefix.append((t + L, lo, hi))
    max_total = prefix[-1][2] if prefix else len(allowed)

    out = []
    for size in range(0, max_total + 1):
        for combo in itertools.combinations(allowed, size):
            ok = True
            for upto, lo, hi in prefix:
                n = sum(1 for c in combo if c <= upto)
                if not lo <= n <= hi:
                    ok = False
                    break
            if ok:
                out.append(combo)
    return out


def _beta_patterns(fixed_cost: float, T: int) -> list[tuple[int, ...]]:
    """Warehouse active-day sets; a free warehouse is always-on (activity
    only relaxes the stock cap, so all-on dominates when it costs nothing)."""
    if fixed_cost == 0.0:
        return [tuple(range(1, T + 1))]
    days = range(1, T + 1)
    return [
        tuple(d for d, on in zip(days, bits) if on)
        for bits in itertools.product((0, 1), repeat=T)
    ]


def _link_day_choices(inst: Instance) -> list[tuple[int, int]]:
    """(mode, vehicle-count) options for one link-day.

    Single-mode instances collapse: no vehicles allowed -> (1, 0); free
    unbounded-below shipping -> (1, U_max), since extra vehicles then only
    relax flow bounds at zero cost. Otherwise every (mode, count) pair is
    a distinct option (unchosen modes carry no vehicles: they could only
    add cost).
    """
    if inst.n_modes == 1:
        mode = inst.modes[0]
        if mode.max_vehicles_per_link_day == 0:
            return [(1, 0)]
        if mode.shipping_cost == 0.0 and mode.min_vehicle_capacity == 0.0:
            return [(1, mode.max_vehicles_per_link_day)]
    return [
        (m, u)
        for m in range(1, inst.n_modes + 1)
        for u in range(inst.modes[m - 1].max_vehicles_per_link_day + 1)
    ]


def _delta_patterns(n_weeks: int, max_loss_weeks: int) -> list[tuple[int, ...]]:
    out = []
    for size in range(0, max_loss_weeks + 1):
        out.extend(itertools.combinations(range(1, n_weeks + 1), size))
    return out


@dataclass
class _ScenarioPattern:
    starts: tuple[tuple[int, ...], ...]  # per plant
    cleans: tuple[tuple[int, ...], ...]  # per plant
    beta: tuple[tuple[int, ...], ...]  # per warehouse: active days
    pw: dict[tuple[int, int, int], tuple[int, int]]  # (i,j,t) -> (mode, u)
    wk: dict[tuple[int, int, int], tuple[int, int]]  # (j,k,t) -> (mode, u)


class _LeafProblem:
    """Continuous remainder of one enumeration leaf, shared across leaves
    of the same instance: variable layout and the fixed equality skeleton."""

    def __init__(self, inst: Instance):
        self.inst = inst
        T, S = inst.n_days, inst.n_scenarios
        I, J, K = inst.n_plants, inst.n_warehouses, inst.n_markets
        self.index: dict[tuple, int] = {}
        n = 0
        for s in range(1, S + 1):
            for fam, dims in (
                ("x", (I, T)),
                ("inv", (I, T)),
                ("w", (J, T)),
                ("y", (I, J, T)),
                ("p", (J, K, T)),
                ("bigP", (J, K, inst.n_weeks)),
                ("slack", (K, inst.n_weeks)),
                ("loss", (inst.n_weeks,)),
            ):
                for idx in itertools.product(*(range(1, d + 1) for d in dims)):
                    self.index[(fam, *idx, s)] = n
                    n += 1
        self.n = n
        rows = []
        rhs = []
        for s in range(1, S + 1):
            for i, plant in enumerate(inst.plants, start=1):
                for t in range(1, T + 1):
                    coeffs = {self.index[("inv", i, t, s)]: 1.0, self.index[("x", i, t, s)]: -1.0}
                    for j in range(1, J + 1):
                        coeffs[self.index[("y", i, j, t, s)]] = 1.0
                    if t > 1:
                        coeffs[self.index[("inv", i, t - 1, s)]] = -1.0
                    rows.append(coeffs)
                    rhs.append(plant.initial_inventory if t == 1 else 0.0)
            for j, w in enumerate(inst.warehouses, start=1):
                for t in range(1, T + 1):
                    coeffs = {self.index[("w", j, t, s)]: 1.0}
                    for i in range(1, I + 1):
                        coeffs[self.index[("y", i, j, t, s)]] = (
                            coeffs.get(self.index[("y", i, j, t, s)], 0.0) - 1.0
                        )
                    for k in range(1, K + 1):
                        coeffs[self.index[("p", j, k, t, s)]] = 1.0
                    if t > 1:
                        coeffs[self.index[("w", j, t - 1, s)]] = -1.0
                    rows.append(coeffs)
                    rhs.append(w.initial_storage if t == 1 else 0.0)
            for tp in range(1, inst.n_weeks + 1):
                for j in range(1, J + 1):
                    for k in range(1, K + 1):
                        coeffs = {self.index[("bigP", j, k, tp, s)]: 1.0}
                        for tau in range(1, DAYS_PER_WEEK + 1):
                            day = DAYS_PER_WEEK * (tp - 1) + tau
                            coeffs[self.index[("p", j, k, day, s)]] = -1.0
                        rows.append(coeffs)
                        rhs.append(0.0)
                for k in range(1, K + 1):
                    coeffs = {self.index[("slack", k, tp, s)]: 1.0}
                    for j in range(1, J + 1):
                        coeffs[self.index[("bigP", j, k, tp, s)]] = 1.0
                    rows.append(coeffs)
                    rhs.append(inst.demand(k, tp, s))
                coeffs = {self.index[("loss", tp, s)]: 1.0}
                for k in range(1, K + 1):
                    coeffs[self.index[("slack", k, tp, s)]] = -1.0
                rows.append(coeffs)
                rhs.append(0.0)
        data, ri, ci = [], [], []
        for r, coeffs in enumerate(rows):
            for i, c in coeffs.items():
                ri.append(r)
                ci.append(i)
                data.append(c)
        self.A_eq = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        self.b_eq = np.array(rhs)

        self.c = np.zeros(n)
        for s in range(1, S + 1):
            r = inst.probabilities[s - 1]
            for t in range(1, T + 1):
                for i, plant in enumerate(inst.plants, start=1):
                    self.c[self.index[("x", i, t, s)]] += r * plant.variable_cost
                    self.c[self.index[("inv", i, t, s)]] += r * plant.holding_cost
                for j, w in enumerate(inst.warehouses, start=1):
                    self.c[self.index[("w", j, t, s)]] += r * w.holding_cost
            for tp in range(1, inst.n_weeks + 1):
                self.c[self.index[("loss", tp, s)]] += (
                    r * inst.loss_cost_per_week[tp - 1]
                )

    def bounds(
        self, patterns: tuple[_ScenarioPattern, ...], delta_on: tuple[int, ...]
    ) -> tuple[np.ndarray, np.ndarray]:
        inst = self.inst
        T = inst.n_days
        I, J, K = inst.n_plants, inst.n_warehouses, inst.n_markets
        lb = np.zeros(self.n)
        ub = np.full(self.n, np.inf)
        for s, pat in enumerate(patterns, start=1):
            for i, plant in enumerate(inst.plants, start=1):
                done = {t0 + inst.batch_days - 1 for t0 in pat.starts[i - 1]}
                for t in range(1, T + 1):
                    idx = self.index[("x", i, t, s)]
                    if t in done:
                        lb[idx] = plant.normal_batch_capacity
                        ub[idx] = plant.max_batch_capacity
                    else:
                        ub[idx] = 0.0
            for j, w in enumerate(inst.warehouses, start=1):
                active = set(pat.beta[j - 1])
                for t in range(1, T + 1):
                    ub[self.index[("w", j, t, s)]] = (
                        w.max_capacity if t in active else 0.0
                    )
            for (i, j, t), (m, u) in pat.pw.items():
                mode = inst.modes[m - 1]
                idx = self.index[("y", i, j, t, s)]
                lb[idx] = mode.min_vehicle_capacity * u
                ub[idx] = mode.max_vehicle_capacity * u
            for (j, k, t), (m, u) in pat.wk.items():
                mode = inst.modes[m - 1]
                idx = self.index[("p", j, k, t, s)]
                lb[idx] = mode.min_vehicle_capacity * u
                ub[idx] = mode.max_vehicle_capacity * u
            for tp in range(1, inst.n_weeks + 1):
                cap = inst.weekly_loss_cap(tp) if tp in delta_on else 0.0
                ub[self.index[("loss", tp, s)]] = cap
        return lb, ub

    def solve_lp(self, lb, ub):
        res = sopt.linprog(
            self.c,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            bounds=np.column_stack([lb, ub]),
            method="highs",
        )
        return res

    def solve_qcqp(self, lb, ub):
        """LP plus the variance cap, solved as a convex QCQP."""
        import cvxpy as cp

        inst = self.inst
        xv = cp.Variable(self.n)
        cons = [self.A_eq @ xv == self.b_eq, xv >= lb]
        finite = np.isfinite(ub)
        cons.append(xv[finite] <= ub[finite])
        rho = np.array(inst.probabilities)
        week_terms = []
        for tp in range(1, inst.n_weeks + 1):
            ls = cp.hstack(
                [xv[self.index[("loss", tp, s)]] for s in range(1, inst.n_scenarios + 1)]
            )
            mu = rho @ ls
            week_terms.append(rho @ cp.square(ls - mu))
        var_expr = cp.sum(cp.hstack(week_terms)) / inst.n_weeks
        cons.append(var_expr <= inst.variance_cap)
        prob = cp.Problem(cp.Minimize(self.c @ xv), cons)
        prob.solve(solver=cp.CLARABEL)
        return prob, xv


def brute_force_micro(
    inst: Instance, budget: int = ENUMERATION_BUDGET, var_tol: float = 1e-9
) -> BruteForceResult:
    """Exhaustively solve a micro instance: enumerate the discrete
    structure, solve each leaf's continuous remainder exactly, return the
    best. Raises BudgetExceededError (reporting the combination count)
    when the instance is too large to enumerate."""
    T, S = inst.n_days, inst.n_scenarios
    I, J, K = inst.n_plants, inst.n_warehouses, inst.n_markets

    plant_patterns: list[list[tuple[tuple[int, ...], tuple[int, ...]]]] = []
    for plant in inst.plants:
        if plant.max_batch_capacity == 0.0:
            # a start can produce nothing and only costs activity: prune
            pats = [((), ())]
        else:
            pats = []
            for st in _start_patterns(T, inst.batch_days):
                for cl in _clean_patterns(
                    st, T, inst.batch_days, inst.cleaning_days,
                    plant.batches_before_cleaning,
                ):
                    pats.append((st, cl))
        plant_patterns.append(pats)

    beta_patterns = [_beta_patterns(w.fixed_cost, T) for w in inst.warehouses]
    link_choices = _link_day_choices(inst)
    deltas = _delta_patterns(inst.n_weeks, inst.max_loss_weeks)

    n_link_days = (I * J + J * K) * T  # per scenario
    log10_per_scenario = (
        sum(math.log10(len(p)) for p in plant_patterns)
        + sum(math.log10(len(b)) for b in beta_patterns)
        + n_link_days * math.log10(len(link_choices))
    )
    log10_total = math.log10(len(deltas)) + S * log10_per_scenario
    if log10_total > math.log10(budget):
        raise BudgetExceededError(log10_total, budget)

    leaf = _LeafProblem(inst)

    def scenario_patterns():
        plant_axis = list(itertools.product(*plant_patterns))
        beta_axis = list(itertools.product(*beta_patterns))
        pw_keys = [
            (i, j, t)
            for i in range(1, I + 1)
            for j in range(1, J + 1)
            for t in range(1, T + 1)
        ]
        wk_keys = [
            (j, k, t)
            for j in range(1, J + 1)
            for k in range(1, K + 1)
            for t in range(1, T + 1)
        ]
        out = []
        for plants in plant_axis:
            for betas in beta_axis:
                for pw_combo in itertools.product(link_choices, repeat=len(pw_keys)):
                    for wk_combo in itertools.product(link_choices, repeat=len(wk_keys)):
                        out.append(
                            _ScenarioPattern(
                                starts=tuple(p[0] for p in plants),
                                cleans=tuple(p[1] for p in plants),
                                beta=betas,
                                pw=dict(zip(pw_keys, pw_combo)),
                                wk=dict(zip(wk_keys, wk_combo)),
                            )
                        )
        return out

    scen_pats = scenario_patterns()

    def discrete_cost(patterns) -> float:
        total = 0.0
        for s, pat in enumerate(patterns, start=1):
            r = inst.probabilities[s - 1]
            for i, plant in enumerate(inst.plants, start=1):
                total += r * plant.fixed_cost * len(
                    _alpha_days(pat.starts[i - 1], T, inst.batch_days)
                )
            for j, w in enumerate(inst.warehouses, start=1):
                total += r * w.fixed_cost * len(pat.beta[j - 1])
            for (_i, _j, _t), (m, u) in pat.pw.items():
                total += r * inst.modes[m - 1].shipping_cost * u
            for (_j, _k, _t), (m, u) in pat.wk.items():
                total += r * inst.modes[m - 1].shipping_cost * u
        return total

    best_obj = np.inf
    best: tuple | None = None
    n_leaves = n_feasible = n_qcqp = 0
    use_variance = math.isfinite(inst.variance_cap)
    rho = inst.probabilities
    can_prune = bool(np.all(leaf.c >= 0.0))  # leaf LP value is then >= 0

    for delta_on in deltas:
        for patterns in itertools.product(scen_pats, repeat=S):
            n_leaves += 1
            const = discrete_cost(patterns)
            if can_prune and best is not None and const >= best_obj - 1e-12:
                continue  # discrete cost alone already dominates
            lb, ub = leaf.bounds(patterns, delta_on)
            res = leaf.solve_lp(lb, ub)
            if res.status == 2:
                continue
            if res.status != 0:
                raise RuntimeError(f"leaf LP: {res.message}")
            obj = const + float(res.fun)
            xvec = np.array(res.x)
            if use_variance:
                losses = np.array(
                    [
                        [leaf.index[("loss", tp, s)] for s in range(1, S + 1)]
                        for tp in range(1, inst.n_weeks + 1)
                    ]
                )
                lmat = xvec[losses]
                if evaluate_variance_direct(lmat, rho) > inst.variance_cap + var_tol:
                    n_qcqp += 1
                    prob, xv = leaf.solve_qcqp(lb, ub)
                    if prob.status in ("infeasible", "infeasible_inaccurate"):
                        continue
                    if prob.status not in ("optimal", "optimal_inaccurate"):
                        raise RuntimeError(f"leaf QCQP: {prob.status}")
                    obj = const + float(prob.value)
                    xvec = np.array(xv.value).ravel()
            n_feasible += 1
            if obj < best_obj - 1e-12:
                best_obj = obj
                best = (delta_on, patterns, xvec)

    if best is None:
        return BruteForceResult("infeasible", None, None, n_leaves, n_feasible, n_qcqp)

    delta_on, patterns, xvec = best
    values = _assemble_values(inst, leaf, delta_on, patterns, xvec)
    return BruteForceResult("optimal", best_obj, values, n_leaves, n_feasible, n_qcqp)


def _assemble_values(
    inst: Instance,
    leaf: _LeafProblem,
    delta_on: tuple[int, ...],
    patterns,
    xvec: np.ndarray,
) -> dict[VarKey, float]:
    """Expand a winning leaf into a full named assignment."""
    T, S = inst.n_days, inst.n_scenarios
    I, J, K, M = inst.n_plants, inst.n_warehouses, inst.n_markets, inst.n_modes
    vals: dict[VarKey, float] = {}
    for tp in range(1, inst.n_weeks + 1):
        vals[VarKey("delta", (tp,))] = 1.0 if tp in delta_on else 0.0
    for s, pat in enumerate(patterns, start=1):
        for i in range(1, I + 1):
            starts = set(pat.starts[i - 1])
            cleans = set(pat.cleans[i - 1])
            alpha = _alpha_days(pat.starts[i - 1], T, inst.batch_days)
            for t in range(1, T + 1):
                vals[VarKey("alpha", (i, t, s))] = 1.0 if t in alpha else 0.0
                vals[VarKey("alpha_start", (i, t, s))] = 1.0 if t in starts else 0.0
                vals[VarKey("alpha_clean", (i, t, s))] = 1.0 if t in cleans else 0.0
        for j in range(1, J + 1):
            active = set(pat.beta[j - 1])
            for t in range(1, T + 1):
                vals[VarKey("beta", (j, t, s))] = 1.0 if t in active else 0.0
        for ech, keys in (("pw", pat.pw), ("wk", pat.wk)):
            flow_fam = "y" if ech == "pw" else "p"
            for (a, b, t), (m_sel, u_sel) in keys.items():
                flow = float(xvec[leaf.index[(flow_fam, a, b, t, s)]])
                for m in range(1, M + 1):
                    lam = 1.0 if m == m_sel else 0.0
                    u = float(u_sel) if m == m_sel else 0.0
                    vals[VarKey(f"lambda_{ech}", (a, b, m, t, s))] = lam
                    vals[VarKey(f"u_{ech}", (a, b, m, t, s))] = u
                    vals[VarKey(f"v_{ech}", (a, b, m, t, s))] = lam * u
                    vals[VarKey(f"o_{ech}", (a, b, m, t, s))] = (
                        flow if m == m_sel else 0.0
                    )
    for (key, idx) in leaf.index.items():
        fam, *indices = key
        vals[VarKey(fam, tuple(indices))] = float(xvec[idx])
    return vals
