"""Variance algebra, gradients, cut validity and the cutting-plane loop."""

import io

import numpy as np
import pytest

from agrochain.formulation import build_model
from agrochain.risk import (
    CUT_VIOLATION_TOL,
    LossPoint,
    cutting_plane_solve,
    perspective_cut,
    variance_gradient,
    variance_gradient_pooled,
    variance_value,
    week_variances,
)
from agrochain.solver import solve_model

RHO3 = (0.35, 0.15, 0.5)
FROZEN_POINT = LossPoint(((5.0, 0.0, 5.0), (0.0, 0.0, 0.0)))


def _fd_gradient(point, rho, rel_step=1e-5):
    xs = np.array(point.values, dtype=float)
    grad = np.zeros_like(xs)
    for t in range(xs.shape[0]):
        for s in range(xs.shape[1]):
            h = rel_step * (1.0 + abs(xs[t, s]))
            up, dn = xs.copy(), xs.copy()
            up[t, s] += h
            dn[t, s] -= h
            grad[t, s] = (
                variance_value(LossPoint(tuple(map(tuple, up))), rho)
                - variance_value(LossPoint(tuple(map(tuple, dn))), rho)
            ) / (2 * h)
    return grad


def _random_point(rng, weeks, scenarios, scale=10.0):
    return LossPoint(tuple(map(tuple, rng.uniform(0, scale, (weeks, scenarios)))))


def test_frozen_variance_value():
    assert variance_value(FROZEN_POINT, RHO3) == pytest.approx(1.59375, abs=1e-12)


def test_frozen_gradient_entry():
    grad = variance_gradient(FROZEN_POINT, RHO3)
    # (1/2) * (2*0.35*5 - 2*0.35*4.25) with weighted week-1 mean 4.25
    assert grad[0, 0] == pytest.approx(0.2625, abs=1e-12)
    # week 2 is identically zero: gradient vanishes there
    assert np.allclose(grad[1, :], 0.0)


def test_week_variances_frozen():
    q = week_variances(FROZEN_POINT, RHO3)
    # q has no 1/T' factor: q1 = E[L^2]-E[L]^2 = 21.25 - 4.25^2
    assert q[0] == pytest.approx(21.25 - 4.25**2, abs=1e-12)
    assert q[1] == 0.0
    assert variance_value(FROZEN_POINT, RHO3) == pytest.approx(q.sum() / 2, abs=1e-14)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(25):
        weeks = rng.integers(1, 5)
        scen = rng.integers(2, 6)
        rho = rng.dirichlet(np.ones(scen))
        point = _random_point(rng, weeks, scen)
        grad = variance_gradient(point, rho)
        fd = _fd_gradient(point, rho)
        denom = 1.0 + np.abs(fd)
        assert np.max(np.abs(grad - fd) / denom) <= 1e-6


def test_euler_identity():
    # Var is 2-homogeneous: <grad(x), x> = 2 Var(x)
    rng = np.random.default_rng(7)
    for _ in range(20):
        point = _random_point(rng, 3, 4)
        rho = rng.dirichlet(np.ones(4))
        grad = variance_gradient(point, rho)
        inner = float(np.sum(grad * np.array(point.values)))
        assert inner == pytest.approx(2 * variance_value(point, rho), rel=1e-12)


def test_pooled_gradient_differs():
    point = LossPoint(((5.0, 0.0, 5.0), (1.0, 2.0, 3.0)))
    per_week = variance_gradient(point, RHO3)
    pooled = variance_gradient_pooled(point, RHO3)
    assert per_week[0, 0] == pytest.approx(0.2625, abs=1e-12)
    assert pooled[0, 0] == pytest.approx(-0.49, abs=1e-12)
    # they coincide when the horizon has a single week
    one = LossPoint(((4.0, 1.0, 2.0),))
    assert np.allclose(
        variance_gradient(one, RHO3), variance_gradient_pooled(one, RHO3)
    )


def test_cut_separation_identity():
    rng = np.random.default_rng(3)
    cap = 2.0
    found = 0
    while found < 20:
        point = _random_point(rng, 2, 3, scale=8.0)
        if variance_value(point, RHO3) <= cap:
            continue
        found += 1
        for style in ("perspective", "plain"):
            cuts = perspective_cut(point, RHO3, cap, style=style)
            head = cuts[0]
            gap = head.value_at(point) - head.rhs
            assert gap == pytest.approx(
                variance_value(point, RHO3) - cap, abs=1e-9
            )
            assert gap > CUT_VIOLATION_TOL  # the generating point is cut off


def test_cut_validity_by_sampling():
    rng = np.random.default_rng(11)
    cap = 2.0
    weeks, scen = 2, 3
    gen = None
    while gen is None:
        cand = _random_point(rng, weeks, scen, scale=8.0)
        if variance_value(cand, RHO3) > cap:
            gen = cand
    for style, per_week in (("perspective", False), ("perspective", True), ("plain", False)):
        cuts = perspective_cut(gen, RHO3, cap, style=style, per_week=per_week)
        kept = 0
        while kept < 400:
            xs = rng.uniform(0, 6.0, (weeks, scen))
            # delta semantics: a week with any loss must have its flag on
            delta = [
                1.0 if xs[t].any() or rng.random() < 0.5 else 0.0
                for t in range(weeks)
            ]
            for t in range(weeks):
                if delta[t] == 0.0:
                    xs[t] = 0.0
            point = LossPoint(tuple(map(tuple, xs)))
            if variance_value(point, RHO3) > cap:
                continue
            kept += 1
            for cut in cuts:
                assert cut.violation_at(point, delta) <= 1e-9


def test_cut_as_row(micro_loss):
    ir = build_model(micro_loss, include_variance=False)
    gen = LossPoint(((5.0, 0.0, 5.0), (0.0, 0.0, 0.0)))
    cut = perspective_cut(gen, RHO3, 1.0)[0]
    ext = ir.with_rows([cut.as_row("cut1")])
    row = ext.rows[-1]
    assert row.name == "cut1" and row.tag == "25" and row.sense == "<="
    names = {ext.var_keys[i].family for i, _ in row.coeffs}
    assert names <= {"loss", "delta"}


def test_perspective_cut_trivial_at_degenerate_point():
    flat = LossPoint(((3.0, 3.0, 3.0), (1.0, 1.0, 1.0)))  # zero variance
    cuts = perspective_cut(flat, RHO3, 2.0)
    assert all(c.is_trivial for c in cuts)


def test_cutting_plane_feasible_run(micro_loss):
    log = io.StringIO()
    rep = cutting_plane_solve(micro_loss, time_budget=60, mip_gap=1e-9, log=log)
    assert rep.status == "VARIANCE-FEASIBLE"
    assert rep.variance_feasible
    assert rep.variance == pytest.approx(1.59375, abs=1e-9)
    assert rep.solution.objective == pytest.approx(212.5, abs=1e-6)
    assert len(rep.iterations) == 1
    assert rep.cuts == []  # seed cut is trivial at the cap point and skipped
    assert "trivial" in log.getvalue()
    assert "mode:" in rep.render()


def test_cutting_plane_detects_infeasibility(micro_loss):
    tight = micro_loss.with_overrides(variance_cap=1.0)
    for style in ("perspective", "plain"):
        rep = cutting_plane_solve(tight, style=style, time_budget=60, mip_gap=1e-9)
        assert rep.status == "INFEASIBLE"
        assert len(rep.cuts) >= 1
        assert rep.cuts_log()  # the appended cut is logged


def test_cutting_plane_per_week_rows(micro_loss):
    tight = micro_loss.with_overrides(variance_cap=1.0)
    rep = cutting_plane_solve(tight, per_week=True, time_budget=60, mip_gap=1e-9)
    assert rep.status == "INFEASIBLE"
    kinds = {cut.kind for _, cut in rep.cuts}
    assert "perspective" in kinds and "perspective-week" in kinds


def test_cutting_plane_cut_budget(micro_loss):
    tight = micro_loss.with_overrides(variance_cap=1.0)
    rep = cutting_plane_solve(tight, max_cuts=0, time_budget=60, mip_gap=1e-9)
    assert rep.status == "CUT-LIMIT"
    assert not rep.variance_feasible


def test_loss_point_from_vector(micro_loss):
    ir = build_model(micro_loss, include_variance=True)
    sol = solve_model(ir, time_limit=60, mip_gap=1e-9)
    point = LossPoint.from_vector(ir, sol.values)
    assert np.allclose(point.values, [[5.0, 0.0, 5.0], [0.0, 0.0, 0.0]], atol=1e-7)
