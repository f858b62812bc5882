"""Exception hierarchy.

Every error raised by this package derives from ReasonDistillError so callers
can catch one type. The CLI maps subtypes to exit codes:

    ConfigError           -> 2
    DataError (+ subs)    -> 3
    TeacherTransportError -> 4
    ContractError         -> 5
"""

from __future__ import annotations


class ReasonDistillError(Exception):
    """Base class for all package errors."""


class ConfigError(ReasonDistillError):
    """Invalid or contradictory configuration."""


class DataError(ReasonDistillError):
    """Missing, malformed, or out-of-range data."""


class SequenceLengthError(DataError):
    """A token sequence exceeds the model's context length."""


class CheckpointError(DataError):
    """Corrupt, truncated, or mismatched checkpoint bytes."""


class TeacherTransportError(ReasonDistillError):
    """The teacher backend failed after exhausting retries."""


class ContractError(ReasonDistillError):
    """An internal invariant or API contract was violated."""
