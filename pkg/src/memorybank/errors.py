"""Exception hierarchy shared by all engine modules.

Every error raised on a documented contract boundary derives from
MemoryBankError so embedders of the library can catch one base class.
"""

from __future__ import annotations


class MemoryBankError(Exception):
    """Base class for all engine errors."""


class EmptyTextError(MemoryBankError):
    """A required text field was empty or whitespace-only."""


class NonMonotonicTimestampError(MemoryBankError):
    """An appended turn is older than the last stored turn."""

    def __init__(self, violating, last):
        super().__init__(
            f"timestamp {violating.isoformat()} is earlier than the last "
            f"stored turn at {last.isoformat()}"
        )
        self.violating = violating
        self.last = last


class UnknownUserError(MemoryBankError):
    """No memory exists for the requested user id."""

    def __init__(self, user_id: str):
        super().__init__(f"unknown user: {user_id!r}")
        self.user_id = user_id


class ClockBeforeLastRecallError(MemoryBankError):
    """The supplied clock reads earlier than the state's last recall."""


class AlreadyForgottenError(MemoryBankError):
    """Operation attempted on a tombstoned memory piece."""


class InvalidPolicyError(MemoryBankError):
    """Decay policy failed validation."""


class DimensionMismatchError(MemoryBankError):
    """Vector dimension does not match the index dimension."""

    def __init__(self, expected: int, got: int):
        super().__init__(f"expected dimension {expected}, got {got}")
        self.expected = expected
        self.got = got


class AdapterUnavailableError(MemoryBankError):
    """A remote embedding or language-model adapter failed."""

    def __init__(self, message: str, cause: Exception | None = None):
        super().__init__(message)
        self.cause = cause


class EmptyDayError(MemoryBankError):
    """Daily consolidation was asked to summarize an empty day."""


class EmptyInputError(MemoryBankError):
    """Global consolidation received no daily units."""


class StorageIOError(MemoryBankError):
    """Filesystem failure while reading or writing a user document."""

    def __init__(self, path, cause: Exception | None = None):
        super().__init__(f"storage I/O failure at {path}: {cause}")
        self.path = path
        self.cause = cause


class SerializationError(MemoryBankError):
    """User memory could not be rendered to its document form."""


class DocumentNotFoundError(MemoryBankError):
    """No persisted document exists for the user."""

    def __init__(self, path):
        super().__init__(f"no document at {path}")
        self.path = path


class CorruptDocumentError(MemoryBankError):
    """Persisted document violates the schema; reports the field path."""

    def __init__(self, field_path: str, detail: str):
        super().__init__(f"corrupt document at {field_path}: {detail}")
        self.field_path = field_path


class VersionMismatchError(MemoryBankError):
    """Persisted document carries an unsupported schema version."""

    def __init__(self, found):
        super().__init__(f"unsupported schema_version: {found!r}")
        self.found = found


class InvalidConfigError(MemoryBankError):
    """Service configuration failed validation; lists field diagnostics."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


class UnknownProbeError(MemoryBankError):
    """Probe id not found in the loaded probe set."""


class IncompleteLabelsError(MemoryBankError):
    """Metric aggregation is missing probe/model pairs."""

    def __init__(self, missing: list[tuple[str, str]]):
        pairs = ", ".join(f"{p}/{m}" for p, m in missing)
        super().__init__(f"missing labels or outputs for: {pairs}")
        self.missing = missing


class InvalidScheduleError(MemoryBankError):
    """Probe schedule falls outside the evaluation horizon."""
