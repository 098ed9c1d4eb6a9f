"""Exception types shared across the library."""


class ContextHMMError(Exception):
    """Base class for all library errors."""


class ParseError(ContextHMMError):
    """A log or schema file row is malformed."""


class SchemaError(ContextHMMError):
    """Unknown feature/value, or two artifacts disagree on the vocabulary."""


class AlignmentError(ContextHMMError):
    """Users' time ranges do not overlap, or a timestamp is off-grid."""


class PeriodError(ContextHMMError):
    """Downsampling period is not a multiple of the source period."""


class DegenerateError(ContextHMMError):
    """An observation has probability zero under every hidden state."""


class RangeError(ContextHMMError, ValueError):
    """A plaintext or real value falls outside the representable range."""


class KeyMismatchError(ContextHMMError, KeyError):
    """Ciphertexts from different key pairs were combined."""


class ProtocolError(ContextHMMError):
    """A multi-party protocol message arrived out of order or malformed."""
