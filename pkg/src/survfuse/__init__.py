"""survfuse: survival probability estimation from fused right-censored and
current status data, with doubly robust and efficient one-step estimators."""

from .data import (FusedObservation, FusedSample, InspectionWindow, ingest_csv,
                   inspection_window, write_csv)
from .estimators import (EstimateResult, estimate_covariate_shift, estimate_cs_only,
                         estimate_fusion_dr, estimate_fusion_eff, estimate_rc_only,
                         naive_ivw_combine, normal_quantile, wald_ci)
from .errors import (FitError, NotIdentifiedError, NumericError, PositivityError,
                     SeparationError, SingularSystemError, SolverError,
                     SurvFuseError, ValidationError)
from .fredholm import (BasisSolution, FredholmProblem, FredholmSolution,
                       evaluate_solution, kernel_K, solve_eta_basis,
                       solve_eta_grid, solve_h_basis, solve_h_grid)
from .numerics import (DistributionSpec, RngStream, StepFunctionOnGrid, TimeGrid,
                       least_squares, pava_isotonic, rng_draw, solve_dense_linear,
                       trapezoid_integral)
from .nuisance import (CensoringModel, ConditionalEventModel, DensityRatioModel,
                       InspectionDensityModel, NuisanceBundle, fit_bundle,
                       fit_censoring_model, fit_density_ratio, fit_event_model,
                       fit_inspection_density, misspecified_bundle, oracle_bundle,
                       truncated_expectation)
from .simulation import (DGP_REGISTRY, DgpSpec, RateStudy, SimConfig, SimReport,
                         generate_dataset, rate_study, run_replications, true_phi)

__version__ = "0.1.0"
