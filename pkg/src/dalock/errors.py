"""Exception types shared across the package."""


class DALockError(Exception):
    """Base class for all package errors."""


class CorpusError(DALockError, ValueError):
    """Malformed or invalid password corpus input."""

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SketchError(DALockError):
    """Invalid count sketch operation (bad parameters or wrong state)."""


class GuessTableError(DALockError, ValueError):
    """Malformed guess-number file or table."""

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class KnapsackError(DALockError, ValueError):
    """Invalid password knapsack instance."""


class ConfigError(DALockError, ValueError):
    """Invalid experiment configuration."""


class InvariantViolation(DALockError, AssertionError):
    """A simulation produced a state that violates a model invariant."""
