"""Exception hierarchy shared across the package."""


class SurvFuseError(Exception):
    """Base class for all survfuse-specific failures."""


class ValidationError(SurvFuseError):
    """Malformed input data (bad CSV rows, inconsistent fields, bad config)."""


class NumericError(SurvFuseError):
    """Non-finite values or numerically unusable inputs."""


class SingularSystemError(SurvFuseError):
    """Linear system remained singular after ridge regularization."""


class FitError(SurvFuseError):
    """Nuisance model fitting failed (non-convergence, degenerate likelihood)."""


class SeparationError(FitError):
    """Logistic fit diverged, indicating (quasi-)perfect separation."""


class PositivityError(SurvFuseError):
    """A positivity condition (F bounds, survival floor, censoring floor) failed."""


class SolverError(SurvFuseError):
    """Integral-equation solver failed; carries conditioning diagnostics."""


class NotIdentifiedError(SurvFuseError):
    """Requested estimand is not identified from the available data."""
