class DomainError(ValueError):
    """Input outside the domain of an operation."""


class ShapeError(ValueError):
    pass


class SolverError(ArithmeticError):
    """Linear solve failed; ``condition`` carries the estimate that tripped it."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ReductionError(SolverError):
    pass


class ConversionError(SolverError):
    pass


class TrainingError(RuntimeError):
    """Raised when training diverges or receives non-finite gradients."""

    def __init__(self, message, epoch=None, path=None):
        super().__init__(message)
        self.epoch = epoch
        self.path = path


class ConstraintError(ValueError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)
