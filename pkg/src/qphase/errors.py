"""Exception hierarchy shared by all qphase modules.

Each class carries an ``exit_code`` (2 for bad input, 3 for numerical
failure, 4 for failed validation) so the command-line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class QPhaseError(Exception):
    """Base class for every error raised by qphase."""

    exit_code = 1


class InvalidDimensionError(QPhaseError, ValueError):
    exit_code = 2


class DimensionMismatchError(QPhaseError, ValueError):
    exit_code = 2


class NotHermitianError(QPhaseError, ValueError):
    exit_code = 2


class InvalidStateError(QPhaseError, ValueError):
    """A state or density matrix violates its normalization/positivity contract."""

    exit_code = 2


class InvalidParameterError(QPhaseError, ValueError):
    exit_code = 2


class IntegrationDivergedError(QPhaseError, FloatingPointError):
    """Raised when an integrator produces NaN/inf; ``step`` names the offending step."""

    exit_code = 3

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class NoCycleDetectedError(QPhaseError):
    exit_code = 3


class FixedPointDetectedError(NoCycleDetectedError):
    """The deterministic dynamics relaxed onto a stationary state, not a cycle."""


class NotConvergedError(QPhaseError):
    """A state did not relax onto the limit cycle within the allotted periods."""

    exit_code = 3


class NonNormalizableError(QPhaseError, ValueError):
    exit_code = 3


class BasisError(QPhaseError):
    """A generator basis failed one of its structural checks."""

    exit_code = 4

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(QPhaseError, ValueError):
    exit_code = 2


class ValidationFailure(QPhaseError):
    exit_code = 4
