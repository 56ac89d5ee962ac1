"""Exception taxonomy shared across the package.

Every contract violation maps to a distinct type so callers (and the CLI)
can report machine-readable error kinds instead of parsing messages.
"""


class BitPyramidError(Exception):
    """Base class for all package errors."""

    kind = "error"


class InvalidInputError(BitPyramidError, ValueError):
    """Non-finite or otherwise malformed numeric input."""

    kind = "invalid-input"


class ContractError(BitPyramidError, ValueError):
    """Shape/config mismatch between cooperating components."""

    kind = "contract"


class RangeError(BitPyramidError, ValueError):
    """Scalar argument outside its documented range."""

    kind = "range"


class CapacityError(BitPyramidError, ValueError):
    """Operation refused because it would allocate O(2^d) state."""

    kind = "capacity"


class UnsupportedDimensionError(BitPyramidError, ValueError):
    """Bit dimension too large for the requested representation."""

    kind = "unsupported-dimension"


class ScheduleLookupError(BitPyramidError, KeyError):
    """Unknown aspect ratio or schedule id."""

    kind = "schedule-lookup"


class SerializationError(BitPyramidError):
    """Base for container codec failures."""

    kind = "serialization"


class BadMagicError(SerializationError):
    kind = "bad-magic"


class VersionMismatchError(SerializationError):
    kind = "version-mismatch"


class ChecksumError(SerializationError):
    kind = "checksum"


class TruncatedError(SerializationError):
    kind = "truncated"


class CheckpointError(BitPyramidError):
    """Model checkpoint container is malformed or incompatible."""

    kind = "checkpoint"


class DivergenceError(BitPyramidError, RuntimeError):
    """Training produced a non-finite loss."""

    kind = "divergence"
