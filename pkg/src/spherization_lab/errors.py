"""Error taxonomy shared across the package.

Each error carries a machine-readable ``category`` that the CLI maps to an
exit code, so failing runs stay diagnosable from scripts.
"""


class SpherizationError(Exception):
    """Base class; ``category`` feeds the CLI exit-code mapping."""

    category = "internal-error"
    exit_code = 1


class ConfigError(SpherizationError):
    category = "config-invalid"
    exit_code = 2


class BudgetExceededError(SpherizationError):
    category = "budget-exceeded"
    exit_code = 3


class IntegrationDivergedError(SpherizationError):
    category = "integration-diverged"
    exit_code = 4


class StiffnessError(IntegrationDivergedError):
    """Step-size underflow or solver failure; a flavour of divergence."""


class InvariantFailureError(SpherizationError):
    category = "invariant-failure"
    exit_code = 5


class CalibrationError(SpherizationError):
    category = "config-invalid"
    exit_code = 2
