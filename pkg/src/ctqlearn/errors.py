"""Exception hierarchy shared across the package."""


class CTQLError(Exception):
    """Base class for all package errors."""


class ConfigError(CTQLError, ValueError):
    """Invalid user configuration (bad field, missing preset, bad range)."""


class NumericalError(CTQLError, ArithmeticError):
    """A numerical procedure failed or produced unusable output."""


class DivergenceError(NumericalError):
    """A simulated trajectory left the configured state bound or became non-finite."""


class NonCoerciveError(NumericalError):
    """The quadratic-in-action block of a Q approximation is not positive definite."""


class UnsupportedBasisError(CTQLError, ValueError):
    """The basis does not admit the requested closed-form operation."""


class SingularSystemError(NumericalError):
    """The weighted-residual linear system is rank deficient at the given tolerance."""


class RiccatiError(NumericalError):
    """The Riccati iteration could not produce a stabilizing solution."""


class DatasetFormatError(CTQLError, ValueError):
    """A dataset file is malformed or internally inconsistent."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
