"""Exception types raised across the package."""


class DiffemError(Exception):
    """Base class for package errors."""


class ShapeError(DiffemError, ValueError):
    """Array dimensions do not line up."""


class NonFiniteError(DiffemError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""


class CalibrationError(DiffemError, RuntimeError):
    """Mask intercept bisection could not reach the target ratio."""


class SchemaError(DiffemError, ValueError):
    """Dataset contents disagree with the column schema."""
