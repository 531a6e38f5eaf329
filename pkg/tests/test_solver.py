"""Backends, the outer-approximation wrapper, continuous solves and
result hygiene."""

import numpy as np
import pytest

from agrochain.formulation import ModelIR, VarKey, build_model
from agrochain.solver import (
    DEFAULT_MIP_GAP,
    DEFAULT_TIME_LIMIT,
    FEASIBILITY_TOL,
    GlpkBackend,
    HighsBackend,
    INTEGRALITY_TOL,
    OuterApproximationBackend,
    Solution,
    SolverError,
    get_backend,
    snap_integers,
    solve_continuous,
    solve_model,
    _demote_if_invalid,
)


def test_pinned_defaults():
    assert INTEGRALITY_TOL == 1e-6
    assert FEASIBILITY_TOL == 1e-6
    assert DEFAULT_MIP_GAP == 1e-4
    assert DEFAULT_TIME_LIMIT == 600.0


def test_get_backend():
    assert isinstance(get_backend("highs"), HighsBackend)
    assert isinstance(get_backend("glpk"), GlpkBackend)
    with pytest.raises(SolverError):
        get_backend("gurobi")


@pytest.mark.parametrize("backend", ["highs", "glpk"])
def test_backends_agree_on_micro(micro_batch, backend):
    ir = build_model(micro_batch, include_variance=False)
    sol = get_backend(backend).solve(ir, time_limit=60, mip_gap=1e-9)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(74.4, abs=1e-6)
    assert ir.max_violation(sol.values) <= 1e-6


def test_outer_approximation_passthrough(micro_batch):
    ir = build_model(micro_batch, include_variance=False)
    oa = OuterApproximationBackend(HighsBackend())
    sol = oa.solve(ir, time_limit=60, mip_gap=1e-9)
    assert sol.status == "optimal"
    assert sol.extra_rows == 0  # nothing quadratic to approximate


def test_outer_approximation_on_quadratic(micro_loss):
    ir = build_model(micro_loss, include_variance=True)
    sol = solve_model(ir, time_limit=60, mip_gap=1e-9)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(212.5, abs=1e-6)
    # variance 1.59375 < cap 2: the first incumbent already satisfies the row
    assert ir.quadratic.violation(sol.values) <= FEASIBILITY_TOL * (1 + abs(ir.quadratic.rhs))


def test_solve_model_infeasible(micro_loss):
    tight = micro_loss.with_overrides(variance_cap=1.0)
    ir = build_model(tight, include_variance=True)
    sol = solve_model(ir, time_limit=60, mip_gap=1e-9)
    assert sol.status == "infeasible"
    assert not sol.has_incumbent
    assert sol.extra_rows >= 1  # at least one tangent row was needed


def test_snap_integers(micro_batch):
    ir = build_model(micro_batch, include_variance=False)
    sol = get_backend("highs").solve(ir, time_limit=60, mip_gap=1e-9)
    snapped = snap_integers(ir, sol.values)
    for j, kind in enumerate(ir.kinds):
        if kind != "continuous":
            assert snapped[j] == round(snapped[j])
    bad = np.array(sol.values)
    frac = [j for j, k in enumerate(ir.kinds) if k != "continuous"][0]
    bad[frac] += 0.25
    with pytest.raises(SolverError, match="non-integral"):
        snap_integers(ir, bad)


def _toy_ir():
    ir = ModelIR()
    a = VarKey("x", (1,))
    b = VarKey("u_pw", (1, 1, 1, 1, 1))
    ir.add_variable(a, "continuous", 0.0, 10.0)
    ir.add_variable(b, "integer", 0.0, 5.0)
    ir.add_row("cap", "NA", [(a, 1.0), (b, 1.0)], "<=", 6.0)
    ir.add_objective_term(a, 1.0)
    return ir.freeze()


def test_demote_rejects_garbage_points():
    ir = _toy_ir()
    junk = Solution(status="feasible", objective=0.0, values=np.array([9.0, 0.4]))
    out = _demote_if_invalid(junk, ir)
    assert out.status == "no_solution"
    assert out.values is None
    assert "rejected" in out.message
    clean = Solution(status="feasible", objective=2.0, values=np.array([1.0, 2.0]))
    assert _demote_if_invalid(clean, ir) is clean


def test_solve_continuous_lp(micro_batch):
    ir = build_model(micro_batch, include_variance=False)
    sol = solve_continuous(ir, time_limit=60)
    assert sol.status == "optimal"
    # the relaxation can only be cheaper than the integral optimum
    assert sol.objective <= 74.4 + 1e-9


def test_solve_continuous_qcqp(micro_loss):
    ir = build_model(micro_loss, include_variance=True)
    sol = solve_continuous(ir, time_limit=60)
    assert sol.status == "optimal"
    # losses are equality-forced, so the relaxation meets the integral value
    assert sol.objective == pytest.approx(212.5, rel=1e-6)


def test_highs_refuses_quadratic(micro_loss):
    ir = build_model(micro_loss, include_variance=True)
    with pytest.raises(SolverError):
        HighsBackend().solve(ir, time_limit=10)


def test_solution_has_incumbent():
    assert not Solution(status="infeasible").has_incumbent
    assert Solution(status="optimal", values=np.zeros(1)).has_incumbent
