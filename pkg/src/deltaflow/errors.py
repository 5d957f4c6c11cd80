"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can print a
single parsable line before the human message.
"""


class DeltaFlowError(Exception):
    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message or self.code


# ingestion / alignment
class MissingColumnError(DeltaFlowError):
    code = "MISSING_COLUMN"


class NonMonotonicTimestampError(DeltaFlowError):
    code = "NON_MONOTONIC_TIMESTAMP"


class GapDetectedError(DeltaFlowError):
    code = "GAP_DETECTED"


class EmptyOverlapError(DeltaFlowError):
    code = "EMPTY_OVERLAP"


class InvalidConfigError(DeltaFlowError):
    code = "INVALID_CONFIG"


# features
class LagUnavailableError(DeltaFlowError):
    code = "LAG_UNAVAILABLE"


class BoundaryHourError(DeltaFlowError):
    code = "BOUNDARY_HOUR"


class TooFewSamplesError(DeltaFlowError):
    code = "TOO_FEW_SAMPLES"


class DegenerateDimensionError(DeltaFlowError):
    code = "DEGENERATE_DIMENSION"


class ZeroVarianceError(DeltaFlowError):
    code = "ZERO_VARIANCE"


class SeriesTooShortError(DeltaFlowError):
    code = "SERIES_TOO_SHORT"


# networks and models
class DimensionMismatchError(DeltaFlowError):
    code = "DIMENSION_MISMATCH"


class TapeMismatchError(DeltaFlowError):
    code = "TAPE_MISMATCH"


class NonFiniteInputError(DeltaFlowError):
    code = "NON_FINITE_INPUT"


class DegenerateDataError(DeltaFlowError):
    code = "DEGENERATE_DATA"


class SingularDesignError(DeltaFlowError):
    code = "SINGULAR_DESIGN"


class EmptyBucketError(DeltaFlowError):
    code = "EMPTY_BUCKET"


class ModelFormatError(DeltaFlowError):
    code = "MODEL_FORMAT"


# scoring
class InvalidIntervalError(DeltaFlowError):
    code = "INVALID_INTERVAL"


class InvalidAlphaError(DeltaFlowError):
    code = "INVALID_ALPHA"


class HourMismatchError(DeltaFlowError):
    code = "HOUR_MISMATCH"


# xai
class DegenerateTargetError(DeltaFlowError):
    code = "DEGENERATE_TARGET"


class EmptyTestSetError(DeltaFlowError):
    code = "EMPTY_TEST_SET"
