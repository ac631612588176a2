"""De-biased ridge inference for high-dimensional grouped regression.

Asymptotically valid p-values and confidence intervals for fixed-effect
coefficients when covariates outnumber observations and observations
are correlated within groups, plus the simulation and diagnostic
harnesses exercising the method.
"""

__version__ = "0.1.0"

from .debias import (
    DebiasedInference,
    GroupTestResult,
    PipelineConfig,
    RidgeFit,
    c_slack,
    confidence_intervals,
    corrected_estimator,
    full_pipeline,
    kappa_from_omega,
    omega_diag,
    p_group,
    p_single,
    pxt_row,
    ridge_fit,
)
from .design import (
    BlockCovariance,
    GroupedDesign,
    ModelTruth,
    build_design,
    marginal_covariance,
)
from .diagnostics import (
    AssumptionCheck,
    assumption_check,
    run_assumption_cell,
    run_assumption_grid,
    t_4,
    t_ir,
    wishart_scenario,
)
from .errors import (
    ConfoundedRandomEffectsError,
    ConvergenceError,
    DataError,
    DegenerateColumnError,
    DegenerateFitError,
    PipelineError,
)
from .simulate import (
    ComparisonReport,
    ScenarioConfig,
    SimulationReport,
    generate_scenario,
    run_comparison,
    run_group_tests,
    run_single_tests,
)
from .solvers import (
    InitialEstimate,
    ScreeningResult,
    lasso,
    lasso_kkt_gap,
    ols_on_support,
    scaled_lasso,
    select_lambda_l,
    theoretical_lambda_l,
    universal_lambda,
)
from .varcomp import (
    VarianceComponents,
    henderson_m3,
    orthonormal_basis,
    projector,
)

__all__ = [
    "AssumptionCheck",
    "BlockCovariance",
    "ComparisonReport",
    "ConfoundedRandomEffectsError",
    "ConvergenceError",
    "DataError",
    "DebiasedInference",
    "DegenerateColumnError",
    "DegenerateFitError",
    "GroupTestResult",
    "GroupedDesign",
    "InitialEstimate",
    "ModelTruth",
    "PipelineConfig",
    "PipelineError",
    "RidgeFit",
    "ScenarioConfig",
    "ScreeningResult",
    "SimulationReport",
    "VarianceComponents",
    "assumption_check",
    "build_design",
    "c_slack",
    "confidence_intervals",
    "corrected_estimator",
    "full_pipeline",
    "generate_scenario",
    "henderson_m3",
    "kappa_from_omega",
    "lasso",
    "lasso_kkt_gap",
    "marginal_covariance",
    "ols_on_support",
    "omega_diag",
    "orthonormal_basis",
    "p_group",
    "p_single",
    "projector",
    "pxt_row",
    "ridge_fit",
    "run_assumption_cell",
    "run_assumption_grid",
    "run_comparison",
    "run_group_tests",
    "run_single_tests",
    "scaled_lasso",
    "select_lambda_l",
    "t_4",
    "t_ir",
    "theoretical_lambda_l",
    "universal_lambda",
    "wishart_scenario",
]
