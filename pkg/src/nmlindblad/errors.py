"""Exception hierarchy shared by all pipeline stages."""


class NMLindbladError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(NMLindbladError):
    """Malformed or inconsistent run configuration."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InvalidDimensionError(NMLindbladError, ValueError):
    pass


class DomainError(NMLindbladError, ValueError):
    pass


class NumericalError(NMLindbladError, ArithmeticError):
    """A numerical routine failed to reach its stated accuracy."""


class NumericalToleranceError(NumericalError):
    def __init__(self, message, achieved=None):
        self.achieved = achieved
        if achieved is not None:
            message = f"{message} (achieved error estimate {achieved:.3e})"
        super().__init__(message)


class IllConditionedError(NumericalError):
    def __init__(self, index, condition):
        self.index = index
        self.condition = condition
        super().__init__(
            f"transfer matrix is ill-conditioned at time index {index} "
            f"(condition number {condition:.3e})"
        )


class ConsistencyError(NumericalError):
    """An identity that must hold up to rounding was violated."""


class InvariantViolationError(NumericalError):
    def __init__(self, check, magnitude, index=None):
        self.check = check
        self.magnitude = magnitude
        self.index = index
        at = f" at time index {index}" if index is not None else ""
        super().__init__(f"{check} violated{at}: deviation {magnitude:.3e}")


class MemoryBudgetError(NMLindbladError):
    pass


class MapFormatError(NMLindbladError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingArtifactError(NMLindbladError, FileNotFoundError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"expected upstream artifact not found: {path}")
