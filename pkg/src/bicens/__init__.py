"""Tensor I-spline sieve estimation of a bivariate CDF from current-status data."""

from bicens.errors import (
    BicensError,
    ContractViolationError,
    InfeasibleDataError,
    InvalidArgumentError,
    NonFiniteLikelihoodError,
)
from bicens.spline_basis import (
    KnotVector,
    bspline_basis,
    bspline_eval,
    build_knots,
    ispline_basis,
    ispline_eval,
    mspline_basis,
    mspline_eval,
)
from bicens.sieve_model import (
    Dataset,
    Observation,
    SieveSpec,
    ThetaVector,
    cdf_eval,
    check_feasible,
    design_row,
    loglik,
    loglik_grad,
    loglik_hess,
)
from bicens.ggp_optimizer import FitOptions, FitResult, fit
from bicens.simulation import (
    McReport,
    SimConfig,
    generate_dataset,
    knot_count,
    run_monte_carlo,
    tau_to_alpha,
)

__version__ = "0.1.0"

__all__ = [
    "BicensError",
    "ContractViolationError",
    "Dataset",
    "FitOptions",
    "FitResult",
    "InfeasibleDataError",
    "InvalidArgumentError",
    "KnotVector",
    "McReport",
    "NonFiniteLikelihoodError",
    "Observation",
    "SieveSpec",
    "SimConfig",
    "ThetaVector",
    "bspline_basis",
    "bspline_eval",
    "build_knots",
    "cdf_eval",
    "check_feasible",
    "design_row",
    "fit",
    "generate_dataset",
    "ispline_basis",
    "ispline_eval",
    "knot_count",
    "loglik",
    "loglik_grad",
    "loglik_hess",
    "mspline_basis",
    "mspline_eval",
    "run_monte_carlo",
    "tau_to_alpha",
]
