"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the CLI should use for it (1 for validation problems, 2 for numeric
failures).
"""

from __future__ import annotations


class HawkesError(Exception):
    code = "error"
    exit_status = 1


class ValidationError(HawkesError, ValueError):
    code = "validation"
    exit_status = 1


class InvalidModelError(ValidationError):
    code = "invalid-model"


class PreconditionError(ValidationError):
    code = "precondition"


class DegenerateScalingError(ValidationError):
    code = "degenerate-scaling"


class DomainError(ValidationError):
    code = "domain"


class ConfigError(ValidationError):
    code = "config"


class IngestError(ValidationError):
    code = "ingest"


class SchemaError(ValidationError):
    code = "schema"


class NumericError(HawkesError, ArithmeticError):
    code = "numeric"
    exit_status = 2


class NumericOverflowError(NumericError):
    code = "overflow"


class LogOfNonPositiveError(NumericError):
    code = "log-nonpositive"


class NonFiniteError(NumericError):
    code = "non-finite"


class SimulationError(NumericError):
    code = "simulation"


class DegenerateFitError(NumericError):
    code = "degenerate-fit"
