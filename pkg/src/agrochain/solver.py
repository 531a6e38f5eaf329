"""Solver backends over the ModelIR.

Two MILP backends are provided: HiGHS through ``scipy.optimize.milp``
(default) and GLPK through ``cvxopt.glpk``. Neither accepts a quadratic
constraint directly, so models carrying one are solved through
:class:`OuterApproximationBackend`, which alternates MILP solves with
tangent cuts on the quadratic row until it is satisfied. Continuous
subproblems (used by the enumeration oracle) go through
:func:`solve_continuous`: HiGHS LP when linear, CLARABEL via cvxpy when
the quadratic row is present.

All backends return a :class:`Solution` with a normalized status string:
``optimal``, ``feasible`` (incumbent found but stopped on a limit),
``infeasible``, ``unbounded`` or ``no_solution`` (limit hit before any
incumbent).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp

from agrochain.formulation import BINARY, CONTINUOUS, LinearRow, ModelIR

__all__ = [
    "Solution",
    "SolverError",
    "BackendCapabilityError",
    "HighsBackend",
    "GlpkBackend",
    "OuterApproximationBackend",
    "get_backend",
    "solve_model",
    "solve_continuous",
    "snap_integers",
    "INTEGRALITY_TOL",
    "FEASIBILITY_TOL",
    "DEFAULT_MIP_GAP",
    "DEFAULT_TIME_LIMIT",
]

INTEGRALITY_TOL = 1e-6
FEASIBILITY_TOL = 1e-6
DEFAULT_MIP_GAP = 1e-4
DEFAULT_TIME_LIMIT = 600.0


class SolverError(RuntimeError):
    """A backend failed in a way the caller cannot act on."""


class BackendCapabilityError(SolverError):
    """The model asks for a capability the backend does not have."""


@dataclass
class Solution:
    """Normalized result of one solve."""

    status: str
    objective: float | None = None
    bound: float | None = None
    gap: float | None = None
    values: np.ndarray | None = None
    solve_time: float = 0.0
    backend: str = ""
    message: str = ""
    extra_rows: int = 0  # cuts appended inside the backend, if any

    @property
    def has_incumbent(self) -> bool:
        return self.values is not None


def snap_integers(ir: ModelIR, vec: np.ndarray, tol: float = INTEGRALITY_TOL) -> np.ndarray:
    """Round integer/binary entries to the nearest integer.

    Raises SolverError if any entry is further than ``tol`` from an
    integer, which would mean the backend returned a fractional point.
    """
    out = np.array(vec, dtype=float)
    for i, kind in enumerate(ir.kinds):
        if kind == CONTINUOUS:
            continue
        r = round(out[i])
        if abs(out[i] - r) > tol:
            raise SolverError(
                f"non-integral value {out[i]!r} for {ir.var_keys[i]} (tol {tol})"
            )
        out[i] = r
    return out


def _demote_if_invalid(sol: Solution, ir: ModelIR) -> Solution:
    """Drop an incumbent that is not actually integer-feasible.

    At hard time limits a backend can hand back a point that is not an
    incumbent at all (e.g. a partial or relaxation solution). Trusting it
    would poison downstream verification, so check it here and demote the
    result to ``no_solution`` when it violates rows, bounds or
    integrality by more than loose sanity margins.
    """
    if sol.values is None or sol.status not in ("optimal", "feasible"):
        return sol
    int_dev = 0.0
    for i, kind in enumerate(ir.kinds):
        if kind != CONTINUOUS:
            int_dev = max(int_dev, abs(sol.values[i] - round(sol.values[i])))
    row_viol = ir.max_violation(sol.values) if ir.n_rows else 0.0
    if int_dev > 1e-3 or row_viol > 1e-4:
        return Solution(
            status="no_solution",
            bound=sol.bound,
            solve_time=sol.solve_time,
            backend=sol.backend,
            message=(
                f"{sol.message}; returned point rejected "
                f"(row violation {row_viol:.3g}, integrality deviation {int_dev:.3g})"
            ),
        )
    return sol


class HighsBackend:
    """MILP solves through scipy.optimize.milp (HiGHS)."""

    name = "highs"

    def solve(
        self,
        ir: ModelIR,
        time_limit: float | None = None,
        mip_gap: float | None = None,
    ) -> Solution:
        if ir.quadratic is not None:
            raise BackendCapabilityError(
                "highs backend is linear; wrap with OuterApproximationBackend"
            )
        t0 = time.time()
        c = ir.objective_vector()
        A, lo, hi = ir.constraint_matrix()
        integrality = np.array(
            [0 if k == CONTINUOUS else 1 for k in ir.kinds], dtype=np.uint8
        )
        bounds = sopt.Bounds(np.array(ir.lb), np.array(ir.ub))
        options: dict = {"disp": False}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        if mip_gap is not None:
            options["mip_rel_gap"] = float(mip_gap)
        constraints = (
            sopt.LinearConstraint(A, lo, hi) if ir.n_rows else ()
        )
        res = sopt.milp(
            c,
            constraints=constraints,
            integrality=integrality,
            bounds=bounds,
            options=options,
        )
        elapsed = time.time() - t0
        return _demote_if_invalid(self._to_solution(res, elapsed), ir)

    def _to_solution(self, res, elapsed: float) -> Solution:
        bound = getattr(res, "mip_dual_bound", None)
        gap = getattr(res, "mip_gap", None)
        if res.status == 0:
            status = "optimal"
        elif res.status == 1:
            status = "feasible" if res.x is not None else "no_solution"
        elif res.status == 2:
            status = "infeasible"
        elif res.status == 3:
            status = "unbounded"
        else:
            raise SolverError(f"highs: {res.message}")
        return Solution(
            status=status,
            objective=float(res.fun) if res.x is not None else None,
            bound=float(bound) if bound is not None else None,
            gap=float(gap) if gap is not None else None,
            values=np.array(res.x) if res.x is not None else None,
            solve_time=elapsed,
            backend=self.name,
            message=str(res.message),
        )


class GlpkBackend:
    """MILP solves through cvxopt's GLPK bindings.

    GLPK's ilp interface takes inequalities G x <= h and equalities
    A x = b with free variables, so bounds become explicit rows (binaries
    declared in the B set keep their implicit 0/1 box).
    """

    name = "glpk"

    def solve(
        self,
        ir: ModelIR,
        time_limit: float | None = None,
        mip_gap: float | None = None,
    ) -> Solution:
        if ir.quadratic is not None:
            raise BackendCapabilityError(
                "glpk backend is linear; wrap with OuterApproximationBackend"
            )
        from cvxopt import glpk, matrix, spmatrix

        t0 = time.time()
        n = ir.n_variables
        g_rows: list[tuple[dict[int, float], float]] = []
        e_rows: list[tuple[dict[int, float], float]] = []
        for row in ir.rows:
            coeffs = {}
            for i, cf in row.coeffs:
                coeffs[i] = coeffs.get(i, 0.0) + cf
            if row.sense == "<=":
                g_rows.append((coeffs, row.rhs))
            elif row.sense == ">=":
                g_rows.append(({i: -cf for i, cf in coeffs.items()}, -row.rhs))
            else:
                e_rows.append((coeffs, row.rhs))
        binaries = set()
        integers = set()
        for i, kind in enumerate(ir.kinds):
            if kind == BINARY and (ir.lb[i], ir.ub[i]) == (0.0, 1.0):
                binaries.add(i)
                continue
            if kind != CONTINUOUS:
                integers.add(i)
            if np.isfinite(ir.lb[i]):
                g_rows.append(({i: -1.0}, -float(ir.lb[i])))
            if np.isfinite(ir.ub[i]):
                g_rows.append(({i: 1.0}, float(ir.ub[i])))

        def to_spmatrix(rows):
            vals, ridx, cidx, rhs = [], [], [], []
            for r, (coeffs, b) in enumerate(rows):
                rhs.append(b)
                for i, cf in coeffs.items():
                    vals.append(float(cf))
                    ridx.append(r)
                    cidx.append(i)
            M = spmatrix(vals, ridx, cidx, (len(rows), n)) if rows else None
            return M, matrix(rhs) if rows else None

        G, h = to_spmatrix(g_rows)
        A, b = to_spmatrix(e_rows)
        options = {"msg_lev": "GLP_MSG_OFF"}
        if time_limit is not None:
            options["tm_lim"] = int(max(1, round(time_limit * 1000)))
        if mip_gap is not None:
            options["mip_gap"] = float(mip_gap)
        c = matrix(ir.objective_vector())
        kwargs = dict(I=integers, B=binaries, options=options)
        if A is not None:
            status, xvec = glpk.ilp(c, G, h, A, b, **kwargs)
        else:
            status, xvec = glpk.ilp(c, G, h, **kwargs)
        elapsed = time.time() - t0
        if xvec is not None:
            values = np.array(xvec).ravel()
            obj = float(ir.objective_value(values))
        else:
            values, obj = None, None
        mapped = {
            "optimal": "optimal",
            "feasible": "feasible",
            "undefined": "no_solution",
            "primal infeasible": "infeasible",
            "dual infeasible": "unbounded",
            "invalid formulation": None,
            "unknown": "no_solution",
            "LP relaxation is primal infeasible": "infeasible",
            "LP relaxation is dual infeasible": "unbounded",
        }.get(status, "no_solution" if xvec is None else "feasible")
        if mapped is None:
            raise SolverError(f"glpk: {status}")
        return _demote_if_invalid(Solution(
            status=mapped,
            objective=obj,
            bound=None,
            gap=None,
            values=values,
            solve_time=elapsed,
            backend=self.name,
            message=str(status),
        ), ir)


class OuterApproximationBackend:
    """Gives a linear backend quadratic-row capability.

    Solves the model without its quadratic row, then appends tangent
    (first-order) cuts of the convex quadratic at each incumbent until the
    row is satisfied to FEASIBILITY_TOL (scaled by 1 + |rhs|) or the round
    budget runs out. The cuts are generic gradient cuts on the stored
    quadratic row; they do not use the risk-specific cut machinery.
    """

    def __init__(self, inner, max_rounds: int = 50):
        self.inner = inner
        self.max_rounds = max_rounds
        self.name = f"oa({inner.name})"

    def solve(
        self,
        ir: ModelIR,
        time_limit: float | None = None,
        mip_gap: float | None = None,
    ) -> Solution:
        quad = ir.quadratic
        if quad is None:
            return self.inner.solve(ir, time_limit=time_limit, mip_gap=mip_gap)
        t0 = time.time()
        work = ir.without_quadratic()
        scale = 1.0 + abs(quad.rhs)
        n_cuts = 0
        sol = Solution(status="no_solution", backend=self.name)
        for round_no in range(self.max_rounds + 1):
            remaining = None
            if time_limit is not None:
                remaining = time_limit - (time.time() - t0)
                if remaining <= 0:
                    sol.status = "no_solution" if sol.values is None else "feasible"
                    sol.message = "time limit reached during outer approximation"
                    break
            sol = self.inner.solve(work, time_limit=remaining, mip_gap=mip_gap)
            if not sol.has_incumbent:
                break
            viol = quad.violation(sol.values) / scale
            if viol <= FEASIBILITY_TOL:
                break
            if round_no == self.max_rounds:
                sol.status = "feasible"
                sol.message = (
                    f"round budget exhausted with quadratic violation {viol:.3e}"
                )
                break
            # tangent cut: grad(q)(x_bar) . x <= rhs - q(x_bar) + grad . x_bar
            xbar = sol.values
            grad = quad.gradient(xbar)
            qval = quad.value(xbar)
            gdotx = sum(g * xbar[i] for i, g in grad.items())
            n_cuts += 1
            work = work.with_rows(
                [
                    LinearRow(
                        name=f"oa{n_cuts}",
                        tag="25",
                        coeffs=tuple(grad.items()),
                        sense="<=",
                        rhs=quad.rhs - qval + gdotx,
                    )
                ]
            )
        sol.backend = self.name
        sol.solve_time = time.time() - t0
        sol.extra_rows = n_cuts
        return sol


_BACKENDS = {"highs": HighsBackend, "glpk": GlpkBackend}


def get_backend(name: str):
    """Look up a MILP backend by name ('highs' or 'glpk')."""
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise SolverError(
            f"unknown backend {name!r}; available: {sorted(_BACKENDS)}"
        ) from None


def solve_model(
    ir: ModelIR,
    backend: str = "highs",
    time_limit: float | None = DEFAULT_TIME_LIMIT,
    mip_gap: float | None = DEFAULT_MIP_GAP,
) -> Solution:
    """Solve a ModelIR, wrapping the backend when a quadratic row is present."""
    b = get_backend(backend)
    if ir.quadratic is not None:
        b = OuterApproximationBackend(b)
    return b.solve(ir, time_limit=time_limit, mip_gap=mip_gap)


def solve_continuous(ir: ModelIR, time_limit: float | None = None) -> Solution:
    """Solve the model treating every variable as continuous.

    Linear models go to HiGHS (scipy.linprog); a quadratic row switches to
    CLARABEL through cvxpy. Integrality declarations are ignored, so this
    is only meant for models whose integer part is already fixed via
    bounds, and for relaxations.
    """
    t0 = time.time()
    if ir.quadratic is None:
        c = ir.objective_vector()
        A, lo, hi = ir.constraint_matrix()
        ub_rows = np.isfinite(hi)
        lb_rows = np.isfinite(lo)
        A_parts, b_parts = [], []
        if ub_rows.any():
            A_parts.append(A[ub_rows])
            b_parts.append(hi[ub_rows])
        if lb_rows.any():
            A_parts.append(-A[lb_rows])
            b_parts.append(-lo[lb_rows])
        A_ub = sp.vstack(A_parts) if A_parts else None
        b_ub = np.concatenate(b_parts) if b_parts else None
        options = {"disp": False}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        res = sopt.linprog(
            c,
            A_ub=A_ub,
            b_ub=b_ub,
            bounds=list(zip(ir.lb, ir.ub)),
            method="highs",
            options=options,
        )
        elapsed = time.time() - t0
        if res.status == 0:
            return Solution(
                status="optimal",
                objective=float(res.fun),
                values=np.array(res.x),
                solve_time=elapsed,
                backend="highs-lp",
            )
        if res.status == 2:
            return Solution(status="infeasible", solve_time=elapsed, backend="highs-lp")
        if res.status == 3:
            return Solution(status="unbounded", solve_time=elapsed, backend="highs-lp")
        raise SolverError(f"linprog: {res.message}")

    import cvxpy as cp

    n = ir.n_variables
    xv = cp.Variable(n)
    cons = []
    lb = np.array(ir.lb)
    ub = np.array(ir.ub)
    cons.append(xv >= lb)
    finite = np.isfinite(ub)
    if finite.any():
        cons.append(xv[finite] <= ub[finite])
    A, lo, hi = ir.constraint_matrix()
    if ir.n_rows:
        expr = A @ xv
        hi_rows = np.isfinite(hi)
        lo_rows = np.isfinite(lo)
        if hi_rows.any():
            cons.append(expr[hi_rows] <= hi[hi_rows])
        if lo_rows.any():
            cons.append(expr[lo_rows] >= lo[lo_rows])
    quad = ir.quadratic
    Q = sp.dok_matrix((n, n))
    for i, j, cf in quad.quad:
        if i == j:
            Q[i, i] += cf
        else:
            Q[i, j] += cf / 2.0
            Q[j, i] += cf / 2.0
    lin = np.zeros(n)
    for i, cf in quad.lin:
        lin[i] += cf
    cons.append(cp.quad_form(xv, sp.csc_matrix(Q), assume_PSD=True) + lin @ xv <= quad.rhs)
    prob = cp.Problem(cp.Minimize(ir.objective_vector() @ xv), cons)
    prob.solve(solver=cp.CLARABEL)
    elapsed = time.time() - t0
    if prob.status in ("optimal", "optimal_inaccurate"):
        return Solution(
            status="optimal",
            objective=float(prob.value),
            values=np.array(xv.value).ravel(),
            solve_time=elapsed,
            backend="clarabel",
        )
    if "infeasible" in prob.status:
        return Solution(status="infeasible", solve_time=elapsed, backend="clarabel")
    if "unbounded" in prob.status:
        return Solution(status="unbounded", solve_time=elapsed, backend="clarabel")
    raise SolverError(f"clarabel: {prob.status}")
