"""Command-line pipeline: flags, report files, exit codes."""

import csv

import pytest

from agrochain.cli import (
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_USAGE,
    build_parser,
    main,
)
from agrochain.instance import bundled_instance, dump_instance
from agrochain.modelfiles import read_mps


def run_cli(*argv):
    return main(list(argv))


def test_full_pipeline(tmp_path):
    out = tmp_path / "out"
    code = run_cli(
        "--instance", "micro_single_batch",
        "--mode", "miqcp", "--mode", "perspective",
        "--compare",
        "--audit",
        "--export", "mps", str(tmp_path / "model.mps"),
        "--out", str(out),
        "--time-limit", "60",
        "--gap", "1e-9",
    )
    assert code == EXIT_OK
    report = (out / "report.txt").read_text()
    assert "[mode: miqcp]" in report and "[mode: perspective]" in report
    assert "verdict: PASS" in report
    assert "comparison" in report and "OK" in report
    assert "model census" in report
    assert "exit code: 0" in report

    with (out / "results.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["miqcp", "perspective"]
    for r in rows:
        assert float(r["objective"]) == pytest.approx(74.4, abs=1e-5)
        assert float(r["variance"]) == 0.0
        assert float(r["loss_w1_s1"]) == 0.0
        assert float(r["loss_w1_s2"]) == 0.0

    assert (out / "cuts.log").read_text().startswith("# mode:")
    exported = read_mps(tmp_path / "model.mps")
    assert exported.n_variables > 0 and exported.quadratic is not None


def test_instance_from_file(tmp_path):
    path = tmp_path / "inst.yaml"
    path.write_text(dump_instance(bundled_instance("micro_zero_demand")))
    out = tmp_path / "out"
    code = run_cli(
        "--instance", str(path), "--mode", "perspective",
        "--out", str(out), "--time-limit", "30", "--gap", "1e-9",
    )
    assert code == EXIT_OK
    assert "objective: 0.000000" in (out / "report.txt").read_text()


def test_default_mode_is_perspective(tmp_path):
    out = tmp_path / "out"
    code = run_cli(
        "--instance", "micro_zero_demand", "--out", str(out),
        "--time-limit", "30", "--gap", "1e-9",
    )
    assert code == EXIT_OK
    assert "modes: perspective" in (out / "report.txt").read_text()


def test_unknown_instance_exits_usage(tmp_path):
    assert run_cli("--instance", "nope", "--out", str(tmp_path)) == EXIT_USAGE


def test_bad_export_format_exits_usage(tmp_path):
    code = run_cli(
        "--instance", "micro_zero_demand",
        "--export", "xlsx", str(tmp_path / "m.xlsx"),
        "--out", str(tmp_path / "out"),
    )
    assert code == EXIT_USAGE


def test_unknown_mode_rejected_by_parser():
    with pytest.raises(SystemExit) as err:
        build_parser().parse_args(["--mode", "bogus"])
    assert err.value.code == 2


def test_infeasible_exits_solver_failure(tmp_path):
    out = tmp_path / "out"
    code = run_cli(
        "--instance", "micro_forced_loss",
        "--variance-cap", "1.0",
        "--mode", "perspective",
        "--out", str(out),
        "--time-limit", "60", "--gap", "1e-9",
    )
    assert code == EXIT_SOLVER
    assert "INFEASIBLE" in (out / "report.txt").read_text()


def test_override_flags_reach_model(tmp_path):
    out = tmp_path / "out"
    code = run_cli(
        "--instance", "micro_forced_loss",
        "--loss-frac", "1.5",
        "--max-loss-weeks", "2",
        "--mode", "miqcp",
        "--out", str(out),
        "--time-limit", "60", "--gap", "1e-9",
    )
    assert code == EXIT_OK
    report = (out / "report.txt").read_text()
    assert "objective: 212.500000" in report


def test_glpk_backend_flag(tmp_path):
    out = tmp_path / "out"
    code = run_cli(
        "--instance", "micro_single_batch",
        "--mode", "miqcp",
        "--backend", "glpk",
        "--out", str(out),
        "--time-limit", "60", "--gap", "1e-9",
    )
    assert code == EXIT_OK
    assert "objective: 74.400000" in (out / "report.txt").read_text()


def test_seed_recorded(tmp_path):
    out = tmp_path / "out"
    run_cli(
        "--instance", "micro_zero_demand", "--seed", "17",
        "--out", str(out), "--time-limit", "30",
    )
    assert "seed: 17" in (out / "report.txt").read_text()
