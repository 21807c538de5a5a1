"""Exception types shared across the toolkit."""

from __future__ import annotations


class OOVSpotError(Exception):
    """Base class for every error raised by this package."""


class InvalidPolygon(OOVSpotError, ValueError):
    """Vertices do not describe a valid simple polygon."""


class NonConvexInput(OOVSpotError, ValueError):
    """A polygon failed the convexity test while strict mode was on."""


class InvalidScale(OOVSpotError, ValueError):
    """A scale or image size was not strictly positive."""


class ParseError(OOVSpotError, ValueError):
    """Malformed input record.

    ``line`` is 1-based; ``source`` names the file when known.
    """

    def __init__(self, message: str, line: int, source: str | None = None):
        self.message = message
        self.line = line
        self.source = source
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.source}:{self.line}" if self.source else f"line {self.line}"
        return f"{where}: {self.message}"

    def with_source(self, source: str) -> "ParseError":
        err = type(self)(self.message, self.line, source)
        return err


class ScoreRange(ParseError):
    """Detection score outside [0, 1]."""


class BadPolygon(ParseError):
    """Record polygon has fewer than 3 vertices or is not simple."""


class EmptyWord(OOVSpotError, ValueError):
    """Empty or don't-care transcription passed where a word is required."""


class FrameMismatch(OOVSpotError, ValueError):
    """Inputs that must share one image_id do not."""


class MissingTranscription(OOVSpotError, ValueError):
    """A detection scored end-to-end carries no transcription."""


class ConfigError(OOVSpotError, ValueError):
    """Invalid or unresolvable run configuration."""
