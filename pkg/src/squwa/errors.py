"""Exception hierarchy shared across the package."""


class SquwaError(Exception):
    """Base class for package errors."""


class ShapeError(SquwaError, ValueError):
    pass


class MaskError(SquwaError, ValueError):
    pass


class ConfigError(SquwaError, ValueError):
    pass


class ChecksumError(SquwaError, IOError):
    pass


class VersionError(SquwaError, IOError):
    pass


class DivergenceError(SquwaError, RuntimeError):
    pass


class NumericalError(SquwaError, ArithmeticError):
    pass


class DegenerateError(SquwaError, ValueError):
    """Raised when a metric is undefined because one class is absent."""


class ConvergenceWarning(UserWarning):
    pass
