"""
Exception hierarchy for panther_toy.

Every error raised on purpose by the package derives from PantherError, and
also from the builtin exception a caller would naturally expect (ValueError,
IndexError, ...), so plain ``except ValueError`` keeps working.
"""
from typing import Optional, Sequence


class PantherError(Exception):
    """Base class for all panther_toy errors."""


class DimensionError(PantherError, ValueError):
    """Raised when tensor shapes do not line up."""

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            rendered = " vs ".join(str(tuple(s)) for s in shapes)
            message = f"{message}: {rendered}"
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class ConfigurationError(PantherError, ValueError):
    """Raised for invalid model or run configuration."""


class VocabularyError(PantherError, KeyError):
    """Raised when a word is not in the closed vocabulary."""

    def __init__(self, word: str):
        super().__init__(f"Unknown word: {word!r}")
        self.word = word

    def __str__(self) -> str:
        return str(self.args[0])


class TargetIndexError(PantherError, IndexError):
    """Raised when a cross-entropy target id is outside the vocabulary."""


class SequenceOverflowError(PantherError, ValueError):
    """Raised when an assembled sequence is longer than the decoder allows."""

    def __init__(self, length: int, max_length: int, conversation_id: Optional[int] = None):
        where = f" (conversation {conversation_id})" if conversation_id is not None else ""
        super().__init__(
            f"Assembled sequence length {length} exceeds maximum {max_length}{where}"
        )
        self.length = length
        self.max_length = max_length
        self.conversation_id = conversation_id


class DegenerateDataError(PantherError, ValueError):
    """Raised when a training example carries no supervised positions."""


class EmptyInputError(PantherError, ValueError):
    """Raised when an operation receives an empty collection it cannot handle."""


class TapeError(PantherError, RuntimeError):
    """Raised on misuse of the autodiff tape."""


class DatasetParseError(PantherError, ValueError):
    """Raised when a dataset file line cannot be decoded."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"Malformed dataset record at line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class TensorFormatError(PantherError, ValueError):
    """Raised when a tensor dump file is not in the expected format."""


class UnknownQuestionError(PantherError, ValueError):
    """Raised when a question does not match any synthetic question template."""
