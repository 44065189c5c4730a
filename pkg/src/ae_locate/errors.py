"""Exception hierarchy shared by all stages.

Every error carries a short machine-parsable ``category`` so the command
line can map it to an exit status.
"""


class AELocateError(Exception):
    category = "error"


class ConfigurationError(AELocateError, ValueError):
    category = "configuration error"


class ParameterError(AELocateError, ValueError):
    category = "parameter error"


class InputError(AELocateError, ValueError):
    category = "input error"


class StructuralError(AELocateError, ValueError):
    """Tensor shapes or channel counts that do not fit a layer."""

    category = "structural error"


class UsageError(AELocateError, RuntimeError):
    category = "usage error"


class NumericalError(AELocateError, ArithmeticError):
    category = "numerical error"


class TrainingDiverged(NumericalError):
    category = "training diverged"


class FormatError(AELocateError, ValueError):
    category = "format error"


class NoArrivalDetected(AELocateError):
    category = "no arrival detected"


class DegeneratePair(AELocateError, ZeroDivisionError):
    category = "degenerate pair"


class InsufficientData(AELocateError, ValueError):
    category = "insufficient data"


class SpaceExhausted(AELocateError):
    """Every discrete point of the search space has been evaluated."""

    category = "space exhausted"
