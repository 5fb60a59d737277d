"""Exception hierarchy used across the package."""


class RelbalError(Exception):
    """Base class for all errors raised by relbal."""

    #: Short stage tag surfaced by the command line front end.
    stage = "relbal"


class ConfigError(RelbalError, ValueError):
    stage = "config"


class SizeError(ConfigError):
    stage = "size"


class UnsupportedError(ConfigError):
    stage = "unsupported"


class DomainError(RelbalError, ValueError):
    stage = "domain"


class DefinitenessError(RelbalError, ValueError):
    stage = "definiteness"


class OrbitError(RelbalError, ValueError):
    stage = "orbit"


class PreconditionError(RelbalError, ValueError):
    stage = "precondition"


class NotBalancedError(PreconditionError):
    stage = "not-balanced"


class AccuracyError(RelbalError, ArithmeticError):
    stage = "accuracy"


class DegeneracyError(RelbalError, ArithmeticError):
    stage = "degeneracy"


class EvaluationError(RelbalError, ArithmeticError):
    stage = "evaluation"


class NonConvergenceError(RelbalError, RuntimeError):
    """Raised when an iterative solver gives up; carries the partial trace."""

    stage = "solver"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
