"""Exception types raised across the package."""


class StackelbergError(Exception):
    """Base class for all package errors."""


class DimensionError(StackelbergError, ValueError):
    """Two vectors (or a vector and a policy family) disagree in dimension."""


class NumericsError(StackelbergError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class UnsupportedError(StackelbergError, NotImplementedError):
    """The requested operation is not offered by this policy family."""


class EnvError(StackelbergError, RuntimeError):
    """An environment produced an invalid transition or reward."""


class ConfigError(StackelbergError, ValueError):
    """A configuration file or override could not be interpreted."""
