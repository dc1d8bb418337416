"""Solvers and convergence studies for the two-scale coupled Darcy problem
under geometric perturbations of the interface."""

from .geometry import (
    AdmissibilityReport,
    DomainConfig,
    ForcingSpec,
    Perturbation,
    lower_bound_constant,
    make_perturbation,
    perturbation_from_table,
    strip_measures,
    validate_admissible,
    xi_perturbation,
)
from .solver1d import (
    BoundRecord,
    PiecewiseField1D,
    estimate_rhs_1d,
    hperp_exact_original,
    hperp_exact_perturbed,
    project_H,
    project_Hperp,
    solve_exact_1d,
    solve_fem_1d,
    vnorm_diff_1d,
)
from .fem2d import (
    Field2D,
    Mesh2D,
    SolverConvergenceError,
    assemble_solve,
    build_fitted_mesh,
    energy_split,
    energy_split_flat,
    vnorm_diff_2d,
)
from .flatten import (
    GradTransfer,
    ainv_norm_bound,
    coercivity_constant,
    grad_transfer,
    lambda_map,
    metric_matrix,
    pullback_norm_bound,
    solve_flattened,
    solve_flattened_1d,
    t_apply,
)
from .study import (
    ConvergenceRecord,
    check_estimates,
    emit_report,
    run_sequence,
    shape_family,
)
from .config import RunConfig, load_config

__all__ = [
    "AdmissibilityReport",
    "BoundRecord",
    "ConvergenceRecord",
    "DomainConfig",
    "Field2D",
    "ForcingSpec",
    "GradTransfer",
    "Mesh2D",
    "Perturbation",
    "PiecewiseField1D",
    "RunConfig",
    "SolverConvergenceError",
    "ainv_norm_bound",
    "assemble_solve",
    "build_fitted_mesh",
    "check_estimates",
    "coercivity_constant",
    "emit_report",
    "energy_split",
    "energy_split_flat",
    "estimate_rhs_1d",
    "grad_transfer",
    "hperp_exact_original",
    "hperp_exact_perturbed",
    "lambda_map",
    "load_config",
    "lower_bound_constant",
    "make_perturbation",
    "metric_matrix",
    "perturbation_from_table",
    "project_H",
    "project_Hperp",
    "pullback_norm_bound",
    "run_sequence",
    "shape_family",
    "solve_exact_1d",
    "solve_fem_1d",
    "solve_flattened",
    "solve_flattened_1d",
    "strip_measures",
    "t_apply",
    "validate_admissible",
    "vnorm_diff_1d",
    "vnorm_diff_2d",
    "xi_perturbation",
]

__version__ = "0.1.0"
