# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Error hierarchy of the mdstore package."""


class MdstoreError(Exception):
    """Base class of every error raised by mdstore."""


class DescriptorError(MdstoreError):
    """Raised when a record descriptor is malformed or inconsistent."""


class RecordEncodingError(MdstoreError):
    """Raised when a record cannot be encoded or violates ingest rules."""


class DimensionError(MdstoreError):
    """Raised on out-of-range dimension ordinals and mismatched value kinds."""


class PoolExhaustedError(MdstoreError):
    """Raised when the node pool cannot serve an acquisition."""


class PoolConfigurationError(MdstoreError):
    """Raised when the node pool cannot be created."""


class SegmentFormatError(MdstoreError):
    """Raised when a serialized segment cannot be decoded."""


class TruncatedSegmentError(SegmentFormatError):
    """The buffer is shorter than the header or the declared total length."""


class SegmentLengthError(SegmentFormatError):
    """Declared total or section lengths are inconsistent."""


class UnknownRecordTypeError(SegmentFormatError):
    """The record type identifier is not in the caller's descriptor registry."""


class SegmentCorruptionError(SegmentFormatError):
    """The packed kd-tree or the records contradict the segment invariants."""


class StorageError(MdstoreError):
    """Raised when segment files cannot be written, read or deleted."""


class SegmentNotFoundError(StorageError):
    """The segment file does not exist."""


class QuerySyntaxError(MdstoreError):
    """Raised when query text does not follow the query grammar."""

    def __init__(self, message: str, position: int, text: str = "") -> None:
        self.position = position
        self.text = text
        super().__init__(f"{message} (at position {position})")

    def pointer(self) -> str:
        """Render the query text with a caret under the offending position."""
        return f"{self.text}\n{' ' * self.position}^"


class QueryValidationError(MdstoreError):
    """Raised when a well-formed query is inconsistent with the descriptor."""


class IngestError(MdstoreError):
    """Raised when a chunk cannot be ingested."""


class DescriptorMismatchError(IngestError):
    """The chunk was encoded with a different record descriptor."""


class ChunkTooLargeError(IngestError):
    """The chunk exceeds the configured maximum chunk size."""


class InvalidStateError(MdstoreError):
    """Raised on an illegal segment reference state transition."""
