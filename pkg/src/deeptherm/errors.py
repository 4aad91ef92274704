"""Exception hierarchy shared across the package."""


class DeepThermError(Exception):
    pass


class ParameterError(DeepThermError, ValueError):
    pass


class SpecError(DeepThermError, ValueError):
    """Invalid lattice description (e.g. a coupling between non-neighbors)."""


class EncodingError(DeepThermError, ValueError):
    """A state cannot be represented in the requested basis."""


class NumericalError(DeepThermError, ArithmeticError):
    pass


class CalibrationError(DeepThermError):
    pass


class MitigationError(DeepThermError, ArithmeticError):
    pass


class ReconstructionError(DeepThermError):
    pass


class FitError(DeepThermError):
    pass


class SizeError(DeepThermError, ValueError):
    pass


class ConfigError(DeepThermError, ValueError):
    pass
