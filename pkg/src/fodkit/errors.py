"""Exception hierarchy shared by the package."""


class FodkitError(Exception):
    """Base class for package errors."""


class DomainError(FodkitError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(FodkitError, ValueError):
    """Unsupported option, malformed configuration or inconsistent inputs."""


class NumericalError(FodkitError, ArithmeticError):
    """A factorization or solve is singular or too ill-conditioned to trust."""


class MissingArtifactError(FodkitError, FileNotFoundError):
    """A precomputed artifact needed by a command does not exist."""
