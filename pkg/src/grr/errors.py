"""Exception types shared across the package."""


class GrrError(Exception):
    """Base class for all package errors."""


class DomainError(GrrError, ValueError):
    """A point or parameter lies outside the domain of an operation."""


class ConfigurationError(GrrError, ValueError):
    """Invalid or inconsistent configuration values."""


class MeshParseError(GrrError, ValueError):
    """Malformed mesh text file; carries the offending line number."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class InfeasibleError(GrrError):
    """No strictly feasible point exists for a constrained problem."""


class DegenerateInputError(GrrError, ValueError):
    """Input data carries no information (e.g. all-zero snapshots)."""


class NumericalError(GrrError, ArithmeticError):
    """A linear system was singular or a computation produced non-finite values."""
