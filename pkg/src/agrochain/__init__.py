"""Scenario-based batch supply-chain planning with a variance-capped
demand-loss risk constraint.

The package builds a deterministic-equivalent mixed-integer model from an
:class:`~agrochain.instance.Instance`, and solves it either directly (one
convex quadratic risk constraint) or through an iterative cutting-plane
reformulation that replaces the quadratic row with perspective cuts.
"""

from agrochain.formulation import (
    ModelIR,
    VarKey,
    build_model,
    model_audit,
)
from agrochain.instance import (
    DemandScenario,
    Instance,
    InstanceError,
    InstanceParseError,
    InstanceValidationError,
    Plant,
    TransportMode,
    Warehouse,
    bundled_instance,
    bundled_instance_names,
    case_study_instance,
    dump_instance,
    load_instance,
)
from agrochain.modelfiles import export_model, read_lp, read_mps, write_lp, write_mps
from agrochain.oracle import (
    brute_force_micro,
    check_solution,
    evaluate_variance_direct,
)
from agrochain.risk import (
    Cut,
    LossPoint,
    RunReport,
    cutting_plane_solve,
    perspective_cut,
    variance_gradient,
    variance_value,
)
from agrochain.solver import Solution, SolverError, get_backend, solve_model

__version__ = "0.1.0"

__all__ = [
    "Cut",
    "DemandScenario",
    "Instance",
    "InstanceError",
    "InstanceParseError",
    "InstanceValidationError",
    "LossPoint",
    "ModelIR",
    "Plant",
    "RunReport",
    "Solution",
    "SolverError",
    "TransportMode",
    "VarKey",
    "Warehouse",
    "brute_force_micro",
    "build_model",
    "bundled_instance",
    "bundled_instance_names",
    "case_study_instance",
    "check_solution",
    "cutting_plane_solve",
    "dump_instance",
    "evaluate_variance_direct",
    "export_model",
    "get_backend",
    "load_instance",
    "model_audit",
    "perspective_cut",
    "read_lp",
    "read_mps",
    "solve_model",
    "variance_gradient",
    "variance_value",
    "write_lp",
    "write_mps",
    "__version__",
]
