"""Exception hierarchy.

Every error carries the CLI exit code of its class so the front end can map
failures without a lookup table of its own.
"""
from __future__ import annotations


class HaffsimError(Exception):
    exit_code = 1


# -- configuration ---------------------------------------------------------
class ConfigError(HaffsimError):
    exit_code = 2


class CurveSpecError(ConfigError):
    pass


# -- geometry --------------------------------------------------------------
class GeometryError(HaffsimError):
    exit_code = 3


class OverlapError(GeometryError):
    pass


class EmptyTableError(GeometryError):
    pass


class RangeError(GeometryError):
    pass


class InfiniteHorizonError(GeometryError):
    def __init__(self, direction: tuple[int, int], offset: float):
        self.direction = direction
        self.offset = offset
        super().__init__(
            f"open corridor in lattice direction {direction} at normal offset {offset:.6g}"
        )


# -- restitution models ----------------------------------------------------
class ModelError(HaffsimError):
    exit_code = 4


class ModelRangeError(ModelError):
    pass


class ModelKindError(ModelError):
    pass


class ConditionCError(ModelError):
    pass


class InfeasibleError(ModelError):
    pass


# -- numerics --------------------------------------------------------------
class NumericError(HaffsimError):
    exit_code = 5


class GrazingError(NumericError):
    pass


class QuadratureError(NumericError):
    pass


class StepSizeError(NumericError):
    pass


class SpeedFloorError(NumericError):
    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class GridMismatchError(NumericError):
    pass


class InsufficientDataError(NumericError):
    pass


# -- internal consistency --------------------------------------------------
class InternalError(HaffsimError):
    exit_code = 6


class HorizonViolation(InternalError):
    pass


EXIT_CODES = {
    "ok": 0,
    "config": ConfigError.exit_code,
    "geometry": GeometryError.exit_code,
    "model": ModelError.exit_code,
    "numeric": NumericError.exit_code,
    "internal": InternalError.exit_code,
}
