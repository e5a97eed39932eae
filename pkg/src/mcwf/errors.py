"""Exception hierarchy shared by all modules."""


class MCWFError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 3


class InvalidDimensionError(MCWFError, ValueError):
    exit_code = 2


class DimensionMismatchError(MCWFError, ValueError):
    exit_code = 2


class DegenerateStateError(MCWFError, ArithmeticError):
    pass


class NumericError(MCWFError, ArithmeticError):
    pass


class StiffnessError(NumericError):
    """Adaptive stepper needed a step below ``dt_min``."""


class PictureOverflowError(NumericError):
    pass


class TruncationError(MCWFError):
    """Population reached the edge of the truncated basis."""

    exit_code = 4

    def __init__(self, message, tail_weight=None):
        super().__init__(message)
        self.tail_weight = tail_weight


class InvalidTransitionError(MCWFError, ValueError):
    exit_code = 2


class UndefinedMetricError(MCWFError, ValueError):
    pass


class ContractError(MCWFError, ValueError):
    exit_code = 2


class ValidationError(MCWFError, ValueError):
    exit_code = 2

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class EnsembleFailure(MCWFError):
    def __init__(self, message, failed_indices, codes):
        super().__init__(message)
        self.failed_indices = list(failed_indices)
        self.codes = list(codes)
        # the most severe failure decides the exit code
        self.exit_code = 4 if 4 in self.codes else 3
