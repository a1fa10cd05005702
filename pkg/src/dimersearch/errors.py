"""Exception types raised by the library."""


class DimerError(Exception):
    """Base class for all library errors."""


class NonFiniteValue(DimerError, FloatingPointError):
    """An energy or gradient evaluation returned NaN or Inf."""

    def __init__(self, what, where):
        self.what = what
        self.where = where
        super().__init__(f"non-finite {what} at {where}")


class MetricSolveFailure(DimerError):
    pass


class SingularMetric(DimerError):
    pass


class DegenerateInput(DimerError, ValueError):
    pass


class RotationStall(DimerError):
    """Rotation gave up; ``v``, ``beta`` and ``evaluation`` hold its last accepted state."""

    def __init__(self, message, v=None, beta=None, evaluation=None):
        super().__init__(message)
        self.v = v
        self.beta = beta
        self.evaluation = evaluation


class EmptyFreeSet(DimerError, ValueError):
    pass


class RootBracketFailure(DimerError):
    pass


class NewtonDivergence(DimerError):
    pass


class ConfigError(DimerError, ValueError):
    """Invalid run or sweep configuration; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
