"""Exception types shared across the toolkit.

ConfigurationError maps to CLI exit code 1, DataError to exit code 2.
"""


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(ForgeError):
    """Invalid or inconsistent configuration (bad thresholds, missing seeds, ...)."""


class DataError(ForgeError):
    """Input data cannot be processed as requested."""


class UnclassifiableTextError(DataError):
    """Text is empty after whitespace stripping and cannot be language-classified."""


class UnsignableDocumentError(DataError):
    """Document produced no shingles, so no MinHash signature exists for it."""


class TrainingDataError(DataError):
    """A training corpus does not meet the minimum requirements."""


class VocabUnreachableError(DataError):
    """Requested vocabulary size is below what the corpus alphabet requires."""

    def __init__(self, requested: int, achieved: int):
        super().__init__(
            f"vocab size {requested} is unreachable, minimum achievable is {achieved}"
        )
        self.requested = requested
        self.achieved = achieved


class UntrainableSampleError(DataError):
    """A fine-tuning sample has no assistant tokens left to train on."""
