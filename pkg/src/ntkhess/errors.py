"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or argument (CLI exit code 2)."""


class NumericalError(ArithmeticError):
    """Numerical failure such as a non-PSD covariance or a diverging flow (CLI exit code 3)."""


class DomainError(NumericalError):
    """An input lies outside the mathematical domain of an operation."""


class IngestionError(ConfigError):
    """Malformed input file (reported like a configuration error)."""
