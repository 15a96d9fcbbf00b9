"""Exception hierarchy shared by all dicgan modules."""


class DicganError(Exception):
    """Base class for all package errors."""


class ShapeError(DicganError):
    """Tensor or field extents are incompatible with an operation."""


class GraphError(DicganError):
    """Misuse of the differentiation graph (e.g. double backward)."""


class DataError(DicganError):
    """Malformed input data: bad CSV rows, bad containers, empty regions."""


class ConfigError(DicganError):
    """Invalid or inconsistent run configuration."""


class NumericalError(DicganError):
    """NaN/Inf encountered where finite values are required."""
