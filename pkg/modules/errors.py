# modules/errors.py
"""
Exception types raised by the laboratory modules.

Every error carries a short ``kind`` (used in the machine-readable error JSON
printed by the CLI) and the process ``exit_code`` the CLI should return.
"""


class LabError(Exception):
    kind = "error"
    exit_code = 3


class InvalidParameterError(LabError, ValueError):
    kind = "invalid-parameter"
    exit_code = 2


class InvalidInputError(LabError, ValueError):
    kind = "invalid-input"
    exit_code = 2


class UsageError(LabError):
    kind = "usage"
    exit_code = 2


class CacheError(LabError):
    kind = "cache"
    exit_code = 2


class NumericOverflowError(LabError, ArithmeticError):
    kind = "numeric-overflow"


class FrameUnresolvedError(LabError):
    kind = "frame-unresolved"


class ConeDegenerateError(LabError):
    kind = "cone-degenerate"


class NotPeriodicError(LabError, ValueError):
    kind = "not-periodic"


class InsufficientDataError(LabError, ValueError):
    kind = "insufficient-data"


class InconsistentInputsError(LabError, ValueError):
    kind = "inconsistent-inputs"


class FrequencyMismatchError(LabError, ValueError):
    kind = "frequency-mismatch"
