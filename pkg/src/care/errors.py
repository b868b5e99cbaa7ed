"""Exception hierarchy shared by every module."""


class CareError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(CareError, ValueError):
    """Malformed or unusable input data or configuration."""

    exit_code = 2


class NumericalError(CareError, ArithmeticError):
    """A numerical routine failed (singular matrix, divergence, ...)."""

    exit_code = 3
