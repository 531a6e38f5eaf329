"""Independent verification and exhaustive micro-instance solving."""

import numpy as np
import pytest

from agrochain.formulation import VarKey, build_model
from agrochain.oracle import (
    BudgetExceededError,
    brute_force_micro,
    check_solution,
    evaluate_variance_direct,
    _clean_patterns,
    _start_patterns,
)
from agrochain.risk import LossPoint, variance_value
from agrochain.solver import solve_model

RHO3 = (0.35, 0.15, 0.5)
FROZEN_LOSSES = [[5.0, 0.0, 5.0], [0.0, 0.0, 0.0]]


def test_frozen_variance_in_oracle():
    assert evaluate_variance_direct(FROZEN_LOSSES, RHO3) == pytest.approx(
        1.59375, abs=1e-12
    )


def test_variance_paths_agree():
    rng = np.random.default_rng(12)
    for _ in range(50):
        weeks = rng.integers(1, 5)
        scen = rng.integers(2, 6)
        rho = rng.dirichlet(np.ones(scen))
        xs = rng.uniform(0, 20, (weeks, scen))
        direct = evaluate_variance_direct(xs, rho)
        via_risk = variance_value(LossPoint(tuple(map(tuple, xs))), rho)
        assert abs(direct - via_risk) <= 1e-12 * (1 + abs(direct))


def test_check_solution_passes_on_solver_output(micro_loss):
    ir = build_model(micro_loss, include_variance=True)
    sol = solve_model(ir, time_limit=60, mip_gap=1e-9)
    report = check_solution(
        micro_loss, ir.values_dict(sol.values), reported_objective=sol.objective
    )
    assert report.ok
    assert report.variance == pytest.approx(1.59375, abs=1e-9)
    assert report.loss_total == pytest.approx(10.0, abs=1e-7)
    assert "PASS" in report.render()


def test_check_solution_flags_corruption(micro_loss):
    ir = build_model(micro_loss, include_variance=True)
    sol = solve_model(ir, time_limit=60, mip_gap=1e-9)
    values = ir.values_dict(sol.values)

    broken = dict(values)
    broken[VarKey("loss", (1, 1))] = 0.0  # loss no longer matches slack
    report = check_solution(micro_loss, broken)
    bad_groups = {g.group for g in report.groups if not g.ok}
    assert not report.ok and "weekly-demand" in bad_groups

    fractional = dict(values)
    fractional[VarKey("delta", (1,))] = 0.5
    report2 = check_solution(micro_loss, fractional)
    assert {g.group for g in report2.groups if not g.ok} >= {"integrality"}

    report3 = check_solution(micro_loss, values, reported_objective=999.0)
    assert not report3.ok and not report3.objective_ok


def test_check_solution_missing_keys_are_zero(micro_zero):
    # an empty assignment violates only the mode-choice equality
    report = check_solution(micro_zero, {})
    bad = {g.group for g in report.groups if not g.ok}
    assert bad == {"mode-choice-pw", "mode-choice-wk"}
    assert report.objective_recomputed == 0.0


@pytest.mark.parametrize(
    "name,expect",
    [
        ("micro_zero_demand", 0.0),
        ("micro_single_batch", 74.4),
        ("micro_forced_loss", 212.5),
    ],
)
def test_brute_force_micro_optima(name, expect, request):
    fixture = {
        "micro_zero_demand": "micro_zero",
        "micro_single_batch": "micro_batch",
        "micro_forced_loss": "micro_loss",
    }[name]
    inst = request.getfixturevalue(fixture)
    res = brute_force_micro(inst)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(expect, abs=1e-9)
    report = check_solution(inst, res.values, reported_objective=res.objective)
    assert report.ok


def test_brute_force_detects_infeasibility(micro_loss):
    tight = micro_loss.with_overrides(variance_cap=1.0)
    res = brute_force_micro(tight)
    assert res.status == "infeasible"
    assert res.values is None and res.objective is None


def test_brute_force_qcqp_escalation(micro_loss):
    # cap between the forced variance and the LP's unconstrained variance
    # cannot exist here (loss is equality-forced), so escalation shows up
    # as the QCQP proving infeasibility rather than re-optimizing
    tight = micro_loss.with_overrides(variance_cap=1.5)
    res = brute_force_micro(tight)
    assert res.status == "infeasible"
    assert res.n_qcqp >= 1


def test_brute_force_budget_refusal(case_study):
    with pytest.raises(BudgetExceededError) as err:
        brute_force_micro(case_study)
    assert err.value.count > err.value.budget
    assert "combinations" in str(err.value)


def test_start_patterns_respect_gap():
    pats = _start_patterns(7, 3)
    assert len(pats) == 9
    for pat in pats:
        assert all(b - a >= 3 for a, b in zip(pat, pat[1:]))
        assert all(1 <= t <= 5 for t in pat)
    assert () in pats and (1, 4) in pats and (2, 5) in pats


def test_clean_patterns_windows():
    # one start on day 1 (T=7, L=3, C=1, B=1): a cleaning is REQUIRED in
    # days 1..4, may not overlap the production window 1..3, so day 4 only;
    # a second cleaning may follow on later free days
    pats = _clean_patterns((1,), 7, 3, 1, 1)
    assert all(4 in p for p in pats)
    assert all(not (set(p) & {1, 2, 3}) for p in pats)
    # with B=2 one start forces nothing and allows nothing
    pats2 = _clean_patterns((1,), 7, 3, 1, 2)
    assert pats2 == [()]
