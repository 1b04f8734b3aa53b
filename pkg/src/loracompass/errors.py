"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input data or configuration (CLI exit code 3)."""


class NumericalError(ArithmeticError):
    """Non-finite loss or other numerical failure (CLI exit code 4)."""


class EpisodeTerminated(RuntimeError):
    """Raised when stepping an episode that has already ended."""
