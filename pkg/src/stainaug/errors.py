"""Exception types raised across the toolkit.

Missing files raise the builtin ``FileNotFoundError`` and write failures
raise ``OSError``; everything below is specific to image content or
file schemas.
"""


class StainAugError(Exception):
    """Base class for all data errors raised by stainaug."""


class UnsupportedFormat(StainAugError):
    """Image file is readable but not 8-bit with at least 3 channels."""


class CorruptFile(StainAugError):
    """Image file could not be decoded."""


class EmptyMask(StainAugError):
    """A tissue mask selected zero pixels."""


class InsufficientTissue(StainAugError):
    """Too few tissue pixels to estimate a stain matrix."""


class DegenerateInput(StainAugError):
    """Optical density data has rank < 2, so two stains cannot be separated."""


class NoUsableImages(StainAugError):
    """Every image of a corpus was skipped."""

    def __init__(self, message, skipped=()):
        super().__init__(message)
        self.skipped = list(skipped)


class SchemaError(StainAugError):
    """A stats file is missing fields or violates a type invariant."""


class DegenerateSample(StainAugError):
    """A sampled stain column kept collapsing to the zero vector."""


class ParseError(StainAugError):
    """Malformed annotation CSV row."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingColumn(StainAugError):
    """Annotation CSV lacks a required column."""
