"""Exception hierarchy shared by every steerkit module."""


class SteerkitError(Exception):
    """Base class; ``code`` feeds the CLI exit status and JSON error payload."""

    code = "error"
    exit_status = 1


class SpecError(SteerkitError):
    code = "spec_error"
    exit_status = 2


class NumericOverflowError(SteerkitError):
    code = "numeric_overflow"
    exit_status = 3

    def __init__(self, rollout: int, t: int, value: float):
        super().__init__(f"state diverged in rollout {rollout} at t={t} (|entry| = {value:.3g})")
        self.rollout = rollout
        self.t = t


class InsufficientSamplesError(SteerkitError):
    code = "insufficient_samples"
    exit_status = 4


class SingularDesignError(SteerkitError):
    """A least-squares design is rank deficient at tolerance."""

    code = "singular_design"
    exit_status = 5


class GramEventError(SingularDesignError):
    """X1 X1^T is singular: the conditioning event of the two-stage bound fails."""

    code = "gram_event_violation"


class DegenerateDesignError(SingularDesignError):
    code = "degenerate_design"


class UnboundedRhoError(SteerkitError):
    code = "unbounded_rho"
    exit_status = 5


class EmptyTreatmentBinError(SteerkitError):
    code = "empty_treatment_bin"
    exit_status = 6


class UndefinedEstimateError(SteerkitError):
    """Strict-mode adjustment estimate has strata without treated samples."""

    code = "undefined_estimate"
    exit_status = 6


class DegenerateTreatmentError(SteerkitError):
    code = "degenerate_treatment"
    exit_status = 6


class SchemaError(SteerkitError):
    code = "schema_error"
    exit_status = 7


class DataError(SteerkitError):
    code = "data_error"
    exit_status = 7

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
