"""Command-line runner.

Loads an instance (bundled name or YAML path), solves it in one or more
modes — ``miqcp`` (direct solve of the quadratically-constrained model),
``perspective`` (iterative strengthened cuts), ``plain-cut`` (iterative
unstrengthened tangent cuts) — independently verifies every incumbent,
and writes a report directory:

* ``report.txt``   structured run report with the verification verdict
* ``results.csv``  one row per mode: objective, bound, gap, variance,
                   per-week/scenario loss, cut count, iterations, time
* ``cuts.log``     the appended cuts, one line each
* ``model.lp`` / ``model.mps``  optional model export

Exit codes: 0 success and verified, 2 usage, 3 solver failure,
4 verification failure, 5 budget exhausted without a variance-feasible
incumbent. A run whose incumbent fails independent verification exits
nonzero even when the solver itself reported success.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from agrochain.formulation import (
    CASE_STUDY_REFERENCE_SIZE,
    ModelIR,
    build_model,
    model_audit,
)
from agrochain.instance import (
    Instance,
    InstanceError,
    bundled_instance,
    bundled_instance_names,
    load_instance,
)
from agrochain.modelfiles import export_model
from agrochain.oracle import VerificationReport, check_solution
from agrochain.risk import RunReport, cutting_plane_solve
from agrochain.solver import (
    DEFAULT_MIP_GAP,
    DEFAULT_TIME_LIMIT,
    SolverError,
    solve_model,
)

__all__ = ["main", "build_parser", "run"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4
EXIT_BUDGET = 5

MODES = ("miqcp", "perspective", "plain-cut")
# statuses that mean "ran out of budget" rather than "the model has no solution"
_BUDGET_STATUSES = {"TIME-LIMIT", "CUT-LIMIT", "NO-SOLUTION", "no_solution", "feasible"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agrochain",
        description=__doc__.split("\n\n")[1],
        epilog=(
            "exit codes: 0 success+verified, 2 usage, 3 solver failure, "
            "4 verification failure, 5 budget exhausted without a "
            "variance-feasible incumbent"
        ),
    )
    parser.add_argument(
        "--instance",
        default="case_study",
        help="bundled instance name (%s) or a YAML file path"
        % ", ".join(bundled_instance_names()),
    )
    parser.add_argument(
        "--mode",
        action="append",
        choices=MODES,
        help="solve mode; repeat for several (default: perspective)",
    )
    parser.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT,
                        help="wall-clock budget per mode, seconds (default %(default)s)")
    parser.add_argument("--gap", type=float, default=DEFAULT_MIP_GAP,
                        help="relative MIP gap target (default %(default)s)")
    parser.add_argument("--max-cuts", type=int, default=50,
                        help="cut budget for the iterative modes (default %(default)s)")
    parser.add_argument("--variance-cap", type=float, default=None,
                        help="override the weekly-loss variance cap")
    parser.add_argument("--loss-frac", type=float, default=None,
                        help="override the weekly loss fraction cap")
    parser.add_argument("--max-loss-weeks", type=int, default=None,
                        help="override the number of weeks allowed to lose demand")
    parser.add_argument("--batches-before-clean", type=int, default=None,
                        help="override batches allowed between cleanings (all plants)")
    parser.add_argument("--nonanticipative", action="store_true",
                        help="tie week-1 decisions across scenarios")
    parser.add_argument("--backend", default="highs", choices=("highs", "glpk"),
                        help="MILP backend (default %(default)s)")
    parser.add_argument("--seed", type=int, default=0,
                        help="recorded for reproducibility bookkeeping")
    parser.add_argument("--export", nargs=2, metavar=("FMT", "PATH"), default=None,
                        help="also write the built model as lp or mps to PATH")
    parser.add_argument("--out", default="agrochain_out",
                        help="report directory (default %(default)s)")
    parser.add_argument("--compare", action="store_true",
                        help="append a table asserting the iterative modes' "
                             "objectives do not exceed the direct mode's")
    parser.add_argument("--audit", action="store_true",
                        help="append the model-size audit to the report")
    return parser


@dataclass
class ModeOutcome:
    mode: str
    status: str
    objective: float | None
    bound: float | None
    gap: float | None
    variance: float | None
    loss_matrix: np.ndarray | None
    cuts: int
    iterations: int
    wall_time: float
    check: VerificationReport | None
    report: RunReport | None  # iterative modes only
    exit_code: int
    note: str = ""


def _resolve_instance(name_or_path: str) -> Instance:
    if name_or_path in bundled_instance_names():
        return bundled_instance(name_or_path)
    path = Path(name_or_path)
    if path.exists():
        return load_instance(path)
    raise InstanceError(
        f"--instance {name_or_path!r} is neither a bundled name "
        f"({', '.join(bundled_instance_names())}) nor an existing file"
    )


def _apply_overrides(inst: Instance, args: argparse.Namespace) -> Instance:
    overrides = {
        "variance_cap": args.variance_cap,
        "loss_fraction_cap": args.loss_frac,
        "max_loss_weeks": args.max_loss_weeks,
        "batches_before_cleaning": args.batches_before_clean,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return inst.with_overrides(**overrides) if overrides else inst


def _verify(
    inst: Instance, ir: ModelIR, values: np.ndarray, objective: float | None
) -> VerificationReport:
    return check_solution(inst, ir.values_dict(values), reported_objective=objective)


def _run_one_mode(
    mode: str, inst: Instance, ir: ModelIR, args: argparse.Namespace
) -> ModeOutcome:
    t0 = time.time()
    if mode == "miqcp":
        sol = solve_model(
            ir, backend=args.backend, time_limit=args.time_limit, mip_gap=args.gap
        )
        report = None
        status = sol.status
        cuts = sol.extra_rows
        iterations = 1
    else:
        style = "perspective" if mode == "perspective" else "plain"
        report = cutting_plane_solve(
            inst,
            backend=args.backend,
            style=style,
            max_cuts=args.max_cuts,
            time_budget=args.time_limit,
            mip_gap=args.gap,
            nonanticipative_week1=args.nonanticipative,
        )
        sol = report.solution
        status = report.status
        cuts = len(report.cuts)
        iterations = len(report.iterations)
    wall = time.time() - t0

    if sol is None or not sol.has_incumbent:
        budget = status in _BUDGET_STATUSES
        code = EXIT_BUDGET if budget else EXIT_SOLVER
        return ModeOutcome(
            mode, status, None, sol.bound if sol else None, None, None, None,
            cuts, iterations, wall, None, report, code,
            note="no incumbent",
        )

    check = _verify(inst, ir, sol.values, sol.objective)
    variance = check.variance

    code = EXIT_OK
    note = ""
    if not check.ok:
        code = EXIT_VERIFY
        note = "incumbent failed independent verification"
    elif math.isfinite(inst.variance_cap) and variance > inst.variance_cap + 1e-6:
        code = EXIT_BUDGET
        note = "incumbent exceeds the variance cap (budget exhausted)"
    return ModeOutcome(
        mode, status, sol.objective, sol.bound, sol.gap, variance,
        check.loss_matrix, cuts, iterations, wall, check, report, code, note,
    )


def _results_rows(inst: Instance, outcomes: list[ModeOutcome]) -> tuple[list[str], list[list]]:
    loss_cols = [
        f"loss_w{tp}_s{s}"
        for tp in range(1, inst.n_weeks + 1)
        for s in range(1, inst.n_scenarios + 1)
    ]
    header = (
        ["mode", "objective", "bound", "gap", "variance"]
        + loss_cols
        + ["cuts", "iterations", "wall_time_s"]
    )
    rows = []
    for oc in outcomes:
        losses: list = [""] * len(loss_cols)
        if oc.loss_matrix is not None:
            losses = [
                f"{oc.loss_matrix[tp, s]:.9g}"
                for tp in range(inst.n_weeks)
                for s in range(inst.n_scenarios)
            ]
        rows.append(
            [
                oc.mode,
                "" if oc.objective is None else f"{oc.objective:.6f}",
                "" if oc.bound is None else f"{oc.bound:.6f}",
                "" if oc.gap is None else f"{oc.gap:.8f}",
                "" if oc.variance is None else f"{oc.variance:.9g}",
            ]
            + losses
            + [oc.cuts, oc.iterations, f"{oc.wall_time:.2f}"]
        )
    return header, rows


def _compare_block(outcomes: list[ModeOutcome]) -> tuple[str, bool]:
    direct = next((o for o in outcomes if o.mode == "miqcp"), None)
    lines = ["comparison (equal budget, same backend):"]
    ok = True
    if direct is None or direct.objective is None:
        lines.append("  no direct-mode incumbent to compare against")
        return "\n".join(lines), ok
    for oc in outcomes:
        if oc.mode == "miqcp" or oc.objective is None:
            continue
        holds = oc.objective <= direct.objective + 1e-6
        ok = ok and holds
        rel = (direct.objective - oc.objective) / abs(direct.objective) if direct.objective else 0.0
        lines.append(
            f"  {oc.mode}: {oc.objective:.6f} <= miqcp {direct.objective:.6f} + 1e-6 : "
            f"{'OK' if holds else 'VIOLATED'} ({rel:+.2%} relative)"
        )
    return "\n".join(lines), ok


def run(args: argparse.Namespace) -> int:
    inst = _resolve_instance(args.instance)
    inst = _apply_overrides(inst, args)
    modes = args.mode or ["perspective"]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ir = build_model(
        inst, include_variance=True, nonanticipative_week1=args.nonanticipative
    )

    if args.export:
        fmt, dest = args.export
        fmt = fmt.lower()
        if fmt not in ("lp", "mps"):
            raise ValueError(f"--export format must be lp or mps, got {fmt!r}")
        dest_path = Path(dest)
        if dest_path.is_dir():
            dest_path = dest_path / f"model.{fmt}"
        export_model(ir, fmt, dest_path)

    outcomes = [_run_one_mode(mode, inst, ir, args) for mode in modes]

    lines = [
        "run report",
        "==========",
        f"instance: {args.instance}",
        f"modes: {', '.join(modes)}",
        f"backend: {args.backend}",
        f"time limit: {args.time_limit:g}s  gap target: {args.gap:g}  "
        f"max cuts: {args.max_cuts}",
        f"seed: {args.seed}",
        f"nonanticipative week 1: {args.nonanticipative}",
        "(wall times, solver bounds and gaps are solver-nondeterministic)",
        "",
    ]
    for oc in outcomes:
        lines.append(f"[mode: {oc.mode}]")
        if oc.report is not None:
            lines.append(oc.report.render())
        else:
            lines.append(f"status: {oc.status}")
            if oc.objective is not None:
                lines.append(f"objective: {oc.objective:.6f}")
            if oc.bound is not None:
                lines.append(f"bound: {oc.bound:.6f}")
            if oc.gap is not None:
                lines.append(f"gap: {oc.gap:.6%}")
            lines.append(f"tangent rows appended in backend: {oc.cuts}")
            lines.append(f"wall time: {oc.wall_time:.2f}s")
        if oc.check is not None:
            lines.append("")
            lines.append(oc.check.render())
        if oc.note:
            lines.append(f"note: {oc.note}")
        lines.append("")

    compare_ok = True
    if args.compare:
        block, compare_ok = _compare_block(outcomes)
        lines.append(block)
        lines.append("")

    if args.audit:
        # the published reference sizes apply to the bundled case study only
        reference = None if args.instance != "case_study" else CASE_STUDY_REFERENCE_SIZE
        lines.append(model_audit(ir, reference=reference).render())
        lines.append("")

    code = EXIT_OK
    for oc in outcomes:
        if oc.exit_code != EXIT_OK:
            code = oc.exit_code
            break
    if code == EXIT_OK and not compare_ok:
        code = EXIT_VERIFY
    lines.append(f"exit code: {code}")

    (out / "report.txt").write_text("\n".join(lines) + "\n")

    header, rows = _results_rows(inst, outcomes)
    with (out / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)

    cut_lines = []
    for oc in outcomes:
        cut_lines.append(f"# mode: {oc.mode}")
        if oc.report is not None:
            body = oc.report.cuts_log()
            if body:
                cut_lines.append(body)
        else:
            cut_lines.append(f"# {oc.cuts} tangent rows appended inside the backend")
    (out / "cuts.log").write_text("\n".join(cut_lines) + "\n")

    print("\n".join(lines))
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except InstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
