"""Exception hierarchy shared by all modules."""


class HigsNiError(Exception):
    """Base class for all errors raised by this package."""


# numerics
class SingularMatrix(HigsNiError):
    pass


class ConvergenceFailure(HigsNiError):
    pass


class AsymmetricInput(HigsNiError):
    pass


# plant
class DimensionMismatch(HigsNiError):
    pass


class SingularAtFrequency(HigsNiError):
    pass


class EmptyGrid(HigsNiError):
    pass


class PreconditionQ0(HigsNiError):
    """CB + B^T C^T is not positive definite; use the frequency sweep."""


class EqualityInfeasible(HigsNiError):
    pass


class SearchInconclusive(HigsNiError):
    pass


# higs
class ParameterViolation(HigsNiError, ValueError):
    pass


# closed loop
class SimulationError(HigsNiError):
    pass


class OutsideSector(SimulationError):
    pass


class ContinuityViolation(SimulationError):
    pass


class ZenoGuard(SimulationError):
    pass


class NonFinite(SimulationError):
    pass


class PreconditionDefiniteness(HigsNiError):
    pass


# synthesis
class NotSiso(DimensionMismatch):
    pass


class NotSquare(DimensionMismatch):
    pass


class Infeasible(HigsNiError):
    pass


# configuration / scenario validation
class ValidationError(HigsNiError, ValueError):
    pass
