"""Exception hierarchy shared by all modules."""


class RLPPError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(RLPPError, ValueError):
    pass


class NonMonotonic(ValidationError):
    pass


class OutOfWindow(ValidationError):
    pass


class NegativeIntensity(ValidationError):
    pass


class UnknownPreset(ValidationError, KeyError):
    pass


class DegenerateData(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class NumericalError(RLPPError, ArithmeticError):
    """Numeric failure during simulation, training or fitting."""


class DominatingRateOverflow(NumericalError):
    pass


class RolloutOverflow(NumericalError):
    pass


class NonFiniteUpdate(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class FileFormatError(RLPPError, OSError):
    """An input file exists but does not follow the expected format."""
