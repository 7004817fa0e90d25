"""Exception types shared across the package."""

from __future__ import annotations


class TestbedError(Exception):
    """Base class for all errors raised by this package."""


class GraphValidationError(TestbedError):
    """A graph, fact, or entity record violates a structural constraint.

    Carries the offending record so callers can report it verbatim.
    """

    def __init__(self, message: str, record: object = None):
        super().__init__(message if record is None else f"{message}: {record!r}")
        self.record = record


class SchemaError(TestbedError):
    """Serialized input does not match the expected schema."""

    def __init__(self, message: str, location: str | None = None):
        super().__init__(message if location is None else f"{message} (at {location})")
        self.location = location


class ClusteringError(TestbedError):
    """Spectral pipeline failure (bad arguments or solver non-convergence)."""


class ExpertError(TestbedError):
    """Expert construction failure, e.g. an uncorruptible fact."""


class CorpusError(TestbedError):
    """Corpus emission failure (isolated entity, empty paragraph retries, ...)."""


class ParseError(TestbedError):
    """A corpus line could not be parsed back into facts."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


class ProviderError(TestbedError):
    """A name/rephrase provider failed after exhausting retries."""


class ConfigError(TestbedError):
    """Invalid run configuration (unknown key, bad value, missing file)."""
