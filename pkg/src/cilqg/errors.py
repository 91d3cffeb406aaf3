"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class CILQGError(Exception):
    """Base class for all package errors."""


class NotSquare(CILQGError, ValueError):
    pass


class NotPSD(CILQGError, ValueError):
    pass


class ShapeMismatch(CILQGError, ValueError):
    pass


class BadProbability(CILQGError, ValueError):
    pass


class DomainError(CILQGError, ValueError):
    """Model evaluated outside its domain (e.g. steering angle at +-pi/2)."""


class SingularInnovation(CILQGError, ArithmeticError):
    pass


class NonFiniteGradient(CILQGError, ArithmeticError):
    pass


class NonFiniteDerivative(CILQGError, ArithmeticError):
    pass


class NominalInsideObstacle(CILQGError):
    pass


class CoincidentCenters(CILQGError):
    pass


class EmptyBox(CILQGError):
    pass


class NotPositiveDefinite(CILQGError, ArithmeticError):
    """Q_uu + rho*I failed Cholesky; the caller should raise rho and retry."""


class LineSearchFailed(CILQGError):
    pass


class BarrierDomainError(CILQGError, ValueError):
    pass


class InfeasibleStart(CILQGError):
    pass


class NoProgress(CILQGError):
    pass


class SchemaError(CILQGError, ValueError):
    """Scenario document does not match the schema; ``path`` names the field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class InvariantError(CILQGError, ValueError):
    pass


class BadParams(CILQGError, ValueError):
    pass


__all__ = [
    "CILQGError",
    "NotSquare",
    "NotPSD",
    "ShapeMismatch",
    "BadProbability",
    "DomainError",
    "SingularInnovation",
    "NonFiniteGradient",
    "NonFiniteDerivative",
    "NominalInsideObstacle",
    "CoincidentCenters",
    "EmptyBox",
    "NotPositiveDefinite",
    "LineSearchFailed",
    "BarrierDomainError",
    "InfeasibleStart",
    "NoProgress",
    "SchemaError",
    "InvariantError",
    "BadParams",
]
