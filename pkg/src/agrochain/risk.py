"""Variance risk measure on weekly demand loss, and the cutting-plane
reformulation that replaces the quadratic variance cap with linear cuts.

The capped quantity is the across-scenario variance of weekly loss,
averaged over weeks:

    Var(x) = (1/T') * sum_t q(x_t)
    q(y)   = sum_s rho_s y_s^2 - (sum_s rho_s y_s)^2

with x_t the vector of scenario losses in week t. q is positive
semidefinite, so Var is convex, and because Var is homogeneous of degree
two, <grad Var(xb), xb> = 2 Var(xb) at any point xb. That identity makes
the cuts below evaluate to exactly Var(xb) - cap at their generating
point, which is the separation property the loop relies on.

Cut forms (all rows are "<= cap"):

  plain        <grad Var(xb), x> - Var(xb)                  <= cap
  perspective  <grad Var(xb), x> - sum_t (q(xb_t)/T') d_t   <= cap

where d_t is the binary week-t loss indicator. The perspective form is
valid because any feasible point with d_t = 0 has x_t = 0 (losses are
capped by cap_t * d_t), so summing the per-week first-order bounds of q
over the active weeks gives

    Var(x) >= <grad Var(xb), x> - sum_{t active} q(xb_t)/T'

and the right-hand sum equals sum_t (q(xb_t)/T') d_t at binary d. It
dominates the plain cut whenever some d_t can be 0, since dropping a
week's constant term tightens the row. With ``per_week=True`` an extra
row per week t with q(xb_t) > 0,

    <grad_t Var(xb), x_t> - (q(xb_t)/T') d_t <= cap,

is emitted alongside the aggregate (each alone bounds one week's
contribution and cannot separate on its own).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from agrochain import solver as _solver
from agrochain.formulation import ModelIR, build_model, delta, loss
from agrochain.instance import Instance

__all__ = [
    "LossPoint",
    "Cut",
    "variance_value",
    "week_variances",
    "variance_gradient",
    "variance_gradient_pooled",
    "perspective_cut",
    "cutting_plane_solve",
    "IterationRecord",
    "RunReport",
    "CUT_VIOLATION_TOL",
]

CUT_VIOLATION_TOL = 1e-6


@dataclass(frozen=True)
class LossPoint:
    """Weekly loss values at a candidate solution, shape (weeks, scenarios)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("LossPoint wants a (weeks, scenarios) matrix")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_weeks(self) -> int:
        return self.values.shape[0]

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_vector(cls, ir: ModelIR, vec: np.ndarray) -> "LossPoint":
        """Extract the loss family from a full solution vector."""
        entries = [
            (key.indices, vec[i])
            for i, key in enumerate(ir.var_keys)
            if key.family == "loss"
        ]
        if not entries:
            raise ValueError("model has no loss variables")
        weeks = max(tp for (tp, _s), _ in entries)
        scen = max(s for (_tp, s), _ in entries)
        out = np.zeros((weeks, scen))
        for (tp, s), val in entries:
            out[tp - 1, s - 1] = val
        return cls(out)


def _as_matrix(point) -> np.ndarray:
    if isinstance(point, LossPoint):
        return point.values
    return np.asarray(point, dtype=float)


def week_variances(point, rho: Sequence[float]) -> np.ndarray:
    """Per-week scenario variance q(x_t) (no averaging over weeks)."""
    xs = _as_matrix(point)
    r = np.asarray(rho, dtype=float)
    mean = xs @ r
    return (xs**2) @ r - mean**2


def variance_value(point, rho: Sequence[float]) -> float:
    """Across-scenario variance of weekly loss averaged over weeks."""
    xs = _as_matrix(point)
    return float(np.sum(week_variances(xs, rho)) / xs.shape[0])


def variance_gradient(point, rho: Sequence[float]) -> np.ndarray:
    """Gradient of variance_value w.r.t. every loss entry, shape of point.

    d Var / d x_{t,s} = (2/T') * rho_s * (x_{t,s} - mean_t),
    mean_t = sum_s rho_s x_{t,s}.
    """
    xs = _as_matrix(point)
    r = np.asarray(rho, dtype=float)
    mean = xs @ r
    return 2.0 * r[None, :] * (xs - mean[:, None]) / xs.shape[0]


def variance_gradient_pooled(point, rho: Sequence[float]) -> np.ndarray:
    """Gradient variant with the subtracted mean pooled over all weeks:
    (2/T') * rho_s * (x_{t,s} - sum_t mean_t). Kept for comparison with a
    published closed form; coincides with variance_gradient when at most
    one week has nonzero losses, differs otherwise, and is not what the
    cutting-plane loop uses."""
    xs = _as_matrix(point)
    r = np.asarray(rho, dtype=float)
    pooled = float(np.sum(xs @ r))
    return 2.0 * r[None, :] * (xs - pooled) / xs.shape[0]


@dataclass(frozen=True)
class Cut:
    """One linear row: sum(loss coeffs) + sum(delta coeffs) <= rhs.

    Coefficients are indexed by 1-based (week, scenario) for loss terms
    and 1-based week for delta terms, so a Cut is independent of any
    particular ModelIR until materialized with :meth:`as_row`.
    """

    loss_coeffs: tuple[tuple[int, int, float], ...]
    delta_coeffs: tuple[tuple[int, float], ...]
    rhs: float
    kind: str  # "perspective" | "plain" | "perspective-week"

    def value_at(self, point, delta_values=None) -> float:
        """Row left-hand side at a loss point (delta defaults to all-ones)."""
        xs = _as_matrix(point)
        total = sum(c * xs[tp - 1, s - 1] for tp, s, c in self.loss_coeffs)
        for tp, c in self.delta_coeffs:
            d = 1.0 if delta_values is None else float(delta_values[tp - 1])
            total += c * d
        return float(total)

    def violation_at(self, point, delta_values=None) -> float:
        return self.value_at(point, delta_values) - self.rhs

    @property
    def is_trivial(self) -> bool:
        """True when the row can never cut anything (all-zero coefficients
        against a nonnegative right-hand side)."""
        coefs = [c for *_, c in self.loss_coeffs] + [c for _, c in self.delta_coeffs]
        return all(abs(c) <= 1e-15 for c in coefs) and self.rhs >= -1e-15

    def as_row(self, name: str) -> tuple:
        """(name, tag, coeffs, sense, rhs) tuple for ModelIR.with_rows."""
        coeffs = [(loss(tp, s), c) for tp, s, c in self.loss_coeffs if c != 0.0]
        coeffs += [(delta(tp), c) for tp, c in self.delta_coeffs if c != 0.0]
        return (name, "25", coeffs, "<=", self.rhs)


def perspective_cut(
    point,
    rho: Sequence[float],
    variance_cap: float,
    style: str = "perspective",
    per_week: bool = False,
) -> list[Cut]:
    """Cuts at a generating point; the first returned Cut is the aggregate
    one satisfying the separation identity value_at(point) - rhs =
    Var(point) - cap (with delta = 1 on every lossy week)."""
    if style not in ("perspective", "plain"):
        raise ValueError(f"unknown cut style {style!r}")
    xs = _as_matrix(point)
    n_weeks, n_scen = xs.shape
    grad = variance_gradient(xs, rho)
    qs = week_variances(xs, rho)
    var = float(np.sum(qs)) / n_weeks

    loss_coeffs = tuple(
        (tp, s, float(grad[tp - 1, s - 1]))
        for tp in range(1, n_weeks + 1)
        for s in range(1, n_scen + 1)
    )
    if style == "plain":
        cuts = [
            Cut(
                loss_coeffs=loss_coeffs,
                delta_coeffs=(),
                rhs=float(variance_cap) + var,
                kind="plain",
            )
        ]
        return cuts
    delta_coeffs = tuple(
        (tp, -float(qs[tp - 1]) / n_weeks) for tp in range(1, n_weeks + 1)
    )
    cuts = [
        Cut(
            loss_coeffs=loss_coeffs,
            delta_coeffs=delta_coeffs,
            rhs=float(variance_cap),
            kind="perspective",
        )
    ]
    if per_week:
        for tp in range(1, n_weeks + 1):
            if qs[tp - 1] <= 0.0:
                continue
            cuts.append(
                Cut(
                    loss_coeffs=tuple(
                        (tp, s, float(grad[tp - 1, s - 1]))
                        for s in range(1, n_scen + 1)
                    ),
                    delta_coeffs=((tp, -float(qs[tp - 1]) / n_weeks),),
                    rhs=float(variance_cap),
                    kind="perspective-week",
                )
            )
    return cuts


# ---------------------------------------------------------------------------
# cutting-plane loop
# ---------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    solve_status: str
    objective: float | None
    bound: float | None
    gap: float | None
    variance: float | None
    cuts_added: int
    wall_time: float


@dataclass
class RunReport:
    """Everything a cutting-plane run produced, renderable as text."""

    mode: str
    backend: str
    status: str  # VARIANCE-FEASIBLE | CUT-LIMIT | TIME-LIMIT | INFEASIBLE | UNBOUNDED | NO-SOLUTION
    solution: _solver.Solution | None
    variance: float | None
    variance_cap: float
    iterations: list[IterationRecord] = field(default_factory=list)
    cuts: list[tuple[str, Cut]] = field(default_factory=list)
    total_time: float = 0.0

    @property
    def variance_feasible(self) -> bool:
        return self.status == "VARIANCE-FEASIBLE"

    def render(self) -> str:
        lines = [
            f"mode: {self.mode}",
            f"backend: {self.backend}",
            f"status: {self.status}",
            f"variance cap: {self.variance_cap:g}",
        ]
        if self.solution is not None and self.solution.has_incumbent:
            lines.append(f"objective: {self.solution.objective:.6f}")
            if self.solution.bound is not None:
                lines.append(f"bound: {self.solution.bound:.6f}")
            if self.solution.gap is not None:
                lines.append(f"gap: {self.solution.gap:.6%}")
        if self.variance is not None:
            lines.append(f"incumbent variance: {self.variance:.9g}")
        lines.append(f"cuts added: {len(self.cuts)}")
        lines.append(f"total time: {self.total_time:.2f}s")
        lines.append("iterations:")
        header = f"  {'it':>3} {'status':>12} {'objective':>14} {'gap':>9} {'variance':>12} {'cuts':>5} {'time':>8}"
        lines.append(header)
        for rec in self.iterations:
            obj = f"{rec.objective:.4f}" if rec.objective is not None else "-"
            gap = f"{rec.gap:.2%}" if rec.gap is not None else "-"
            var = f"{rec.variance:.6g}" if rec.variance is not None else "-"
            lines.append(
                f"  {rec.iteration:>3} {rec.solve_status:>12} {obj:>14} {gap:>9} {var:>12} {rec.cuts_added:>5} {rec.wall_time:>7.2f}s"
            )
        return "\n".join(lines)

    def cuts_log(self) -> str:
        """One line per appended cut (append-only stream format)."""
        lines = []
        for name, cut in self.cuts:
            loss_part = " ".join(
                f"{c:+.6g}*loss({tp},{s})" for tp, s, c in cut.loss_coeffs if c != 0.0
            )
            delta_part = " ".join(
                f"{c:+.6g}*delta({tp})" for tp, c in cut.delta_coeffs if c != 0.0
            )
            body = " ".join(x for x in (loss_part, delta_part) if x) or "0"
            lines.append(f"{name} [{cut.kind}] {body} <= {cut.rhs:.6g}")
        return "\n".join(lines)


def cutting_plane_solve(
    inst: Instance,
    backend: str = "highs",
    style: str = "perspective",
    per_week: bool = False,
    max_cuts: int = 50,
    cut_tol: float = CUT_VIOLATION_TOL,
    time_budget: float = _solver.DEFAULT_TIME_LIMIT,
    mip_gap: float | None = _solver.DEFAULT_MIP_GAP,
    nonanticipative_week1: bool = False,
    log: TextIO | None = None,
) -> RunReport:
    """Iterative reformulation: solve the model without its variance row,
    check the variance of the incumbent's weekly losses, and append cuts
    until the cap holds (within cut_tol), the cut budget runs out, or the
    time budget is exhausted.

    The loop is seeded with the loss point at the per-week caps (all week
    indicators on); that point has identical losses across scenarios, so
    its cut is trivial and trivial cuts are never appended.
    """
    t0 = time.time()
    rho = inst.probabilities
    cap = inst.variance_cap
    b = _solver.get_backend(backend)
    full = build_model(inst, include_variance=True, nonanticipative_week1=nonanticipative_week1)
    work = full.without_quadratic()

    report = RunReport(
        mode=f"cutting-plane/{style}" + ("+per-week" if per_week else ""),
        backend=backend,
        status="NO-SOLUTION",
        solution=None,
        variance=None,
        variance_cap=cap,
    )

    def emit(line: str):
        if log is not None:
            log.write(line + "\n")

    # seed point: losses at the gated caps, every week indicator on
    seed = LossPoint(
        np.tile(
            np.array([[inst.weekly_loss_cap(tp)] for tp in range(1, inst.n_weeks + 1)]),
            (1, inst.n_scenarios),
        )
    )
    n_appended = 0
    for cut in perspective_cut(seed, rho, cap, style=style, per_week=per_week):
        if cut.is_trivial:
            emit(f"seed cut trivial (not appended): {cut.kind}")
            continue
        n_appended += 1
        name = f"cut{n_appended}"
        work = work.with_rows([cut.as_row(name)])
        report.cuts.append((name, cut))
        emit(report.cuts_log().splitlines()[-1])

    iteration = 0
    while True:
        iteration += 1
        remaining = time_budget - (time.time() - t0)
        if remaining <= 0.5:
            report.status = "TIME-LIMIT"
            emit("time budget exhausted before iteration %d" % iteration)
            break
        sol = b.solve(work, time_limit=remaining, mip_gap=mip_gap)
        if sol.status in ("infeasible", "unbounded"):
            report.status = sol.status.upper()
            report.solution = sol
            report.iterations.append(
                IterationRecord(
                    iteration, sol.status, None, sol.bound, None, None, 0, sol.solve_time
                )
            )
            emit(f"iteration {iteration}: {sol.status}")
            break
        if not sol.has_incumbent:
            report.status = "TIME-LIMIT"
            report.solution = sol
            report.iterations.append(
                IterationRecord(
                    iteration, sol.status, None, sol.bound, None, None, 0, sol.solve_time
                )
            )
            emit(f"iteration {iteration}: no incumbent ({sol.status})")
            break

        point = LossPoint.from_vector(work, sol.values)
        var = variance_value(point, rho)
        report.solution = sol
        report.variance = var

        if var <= cap + cut_tol:
            report.iterations.append(
                IterationRecord(
                    iteration, sol.status, sol.objective, sol.bound, sol.gap,
                    var, 0, sol.solve_time,
                )
            )
            report.status = "VARIANCE-FEASIBLE"
            emit(
                f"iteration {iteration}: objective {sol.objective:.6f}, "
                f"variance {var:.6g} <= cap {cap:g} -> feasible"
            )
            break

        if len(report.cuts) >= max_cuts:
            report.iterations.append(
                IterationRecord(
                    iteration, sol.status, sol.objective, sol.bound, sol.gap,
                    var, 0, sol.solve_time,
                )
            )
            report.status = "CUT-LIMIT"
            emit(
                f"iteration {iteration}: variance {var:.6g} > cap {cap:g} "
                f"but cut budget {max_cuts} exhausted"
            )
            break

        cuts = perspective_cut(point, rho, cap, style=style, per_week=per_week)
        appended = 0
        rows = []
        for cut in cuts:
            if cut.is_trivial:
                continue
            if len(report.cuts) >= max_cuts:
                break
            n_appended += 1
            appended += 1
            name = f"cut{n_appended}"
            rows.append(cut.as_row(name))
            report.cuts.append((name, cut))
            emit(report.cuts_log().splitlines()[-1])
        work = work.with_rows(rows)
        report.iterations.append(
            IterationRecord(
                iteration, sol.status, sol.objective, sol.bound, sol.gap,
                var, appended, sol.solve_time,
            )
        )
        emit(
            f"iteration {iteration}: objective {sol.objective:.6f}, "
            f"variance {var:.6g} > cap {cap:g}, appended {appended} cut(s)"
        )
        if appended == 0:
            # violated variance but no usable cut: numerical corner, stop
            report.status = "CUT-LIMIT"
            break

    report.total_time = time.time() - t0
    return report
