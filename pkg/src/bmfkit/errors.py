"""Exception hierarchy shared across the package."""


class BmfError(Exception):
    """Base class for all package errors."""


class DimensionError(BmfError, ValueError):
    """Array shapes do not conform."""


class EmptyMaskError(BmfError, ValueError):
    """An operation needed at least one observed entry."""


class ParameterError(BmfError, ValueError):
    """Distribution or model parameters are invalid."""


class UnderflowError(BmfError, ArithmeticError):
    """A normalizing constant underflowed."""


class LinearSolveError(BmfError, ArithmeticError):
    """A normal-equation system could not be factorized."""


class InputError(BmfError, ValueError):
    """Input data violates a model precondition."""


class DegenerateError(BmfError, ArithmeticError):
    """A conditional posterior is degenerate (zero precision, zero rate, ...)."""


class RankError(BmfError, ValueError):
    """Numerical rank does not match the requested rank."""


class InfeasibleSearchError(BmfError, ValueError):
    """Exhaustive subset search exceeds the configured budget."""


class SingularIntersectionError(BmfError, ArithmeticError):
    """Skeleton intersection block is singular."""


class UndefinedMetricError(BmfError, ValueError):
    """A metric is undefined for the given input."""


class ParseError(BmfError, ValueError):
    """Malformed input file."""


class ShapeError(BmfError, ValueError):
    """Ragged or otherwise malformed dense input."""


class ConfigError(BmfError, ValueError):
    """Invalid run configuration."""
