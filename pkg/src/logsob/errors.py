"""Exception hierarchy shared by all modules."""


class LogSobError(Exception):
    """Base class for every error raised by the toolkit."""


class MeshError(LogSobError, ValueError):
    pass


class BoundaryDetected(MeshError):
    pass


class DegenerateCell(MeshError):
    pass


class IndexOutOfRange(MeshError):
    pass


class UnsupportedSpec(MeshError):
    pass


class IllConditionedFit(LogSobError):
    pass


class NonpositiveDensity(LogSobError, ValueError):
    pass


class IncompatibleRhs(LogSobError, ValueError):
    pass


class NoConvergence(LogSobError, RuntimeError):
    pass


class MixedForms(LogSobError, ValueError):
    pass


class DisconnectedInput(LogSobError, ValueError):
    pass


class QuadratureUnderflow(LogSobError, ValueError):
    pass


class Overflow(LogSobError, FloatingPointError):
    pass


class Diverged(LogSobError, RuntimeError):
    pass


class ExpressionError(LogSobError, ValueError):
    """Density expression is malformed or uses something outside the grammar."""
