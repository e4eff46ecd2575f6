"""Exception hierarchy.

Every error carries a stable ``code`` string so callers (and the CLI) can
report failures in a machine-readable way without parsing messages.
"""


class ScreeningError(Exception):
    code = "ERROR"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


# manifest / io
class MissingColumnError(ScreeningError):
    code = "MISSING_COLUMN"


class BadEnumError(ScreeningError, ValueError):
    code = "BAD_ENUM"


class RangeError(ScreeningError, ValueError):
    code = "RANGE"


class DuplicateIdError(ScreeningError):
    code = "DUPLICATE_ID"


class BadMagicError(ScreeningError):
    code = "BAD_MAGIC"


class DimensionMismatchError(ScreeningError):
    code = "DIMENSION_MISMATCH"


class NonFiniteTemperatureError(ScreeningError, ValueError):
    code = "NON_FINITE_TEMPERATURE"


class OutOfPhysioRangeError(ScreeningError, ValueError):
    code = "OUT_OF_PHYSIO_RANGE"


class SpecOverflowError(ScreeningError):
    code = "SPEC_OVERFLOW"


# segmentation
class NoForegroundError(ScreeningError):
    code = "NO_FOREGROUND"


class LandmarkOutsideMaskError(ScreeningError):
    code = "LANDMARK_OUTSIDE_MASK"


# models
class DegenerateLabelsError(ScreeningError, ValueError):
    code = "DEGENERATE_LABELS"


class NonFiniteFeatureError(ScreeningError, ValueError):
    code = "NON_FINITE_FEATURE"


class SchemaMismatchError(ScreeningError):
    code = "SCHEMA_MISMATCH"


# fusion / evaluation
class MissingRequiredModalityError(ScreeningError):
    code = "MISSING_REQUIRED_MODALITY"

    def __init__(self, message="", case_ids=(), **context):
        super().__init__(message, **context)
        self.case_ids = tuple(case_ids)


class LengthMismatchError(ScreeningError, ValueError):
    code = "LENGTH_MISMATCH"


class EmptyCohortError(ScreeningError):
    code = "EMPTY_COHORT"


class NZeroError(ScreeningError, ValueError):
    code = "N_ZERO"
