"""Exception taxonomy shared across the pipeline.

The CLI maps these onto its exit codes: usage errors exit 1, data errors
exit 2, external-tool errors exit 3.
"""

from __future__ import annotations


class TablesieveError(Exception):
    """Base class for all pipeline errors."""


class UsageError(TablesieveError):
    """Bad invocation: unknown preset, missing flag, unknown model name."""


class DataError(TablesieveError):
    """Malformed or inconsistent input data."""


class ExternalToolError(TablesieveError):
    """A required external process failed or is unavailable."""


class TableParseError(DataError):
    """Raw HTML did not contain a parseable table element."""


class ManifestError(DataError):
    """Dataset manifest violates its schema or invariants."""


class SchemaVersionError(ManifestError):
    """Manifest schema version does not match the reader."""


class TruncatedArchiveError(DataError):
    """WARC stream ended mid-record."""


class ModelConfigError(DataError):
    """Model file or manifest is unusable: bad shapes, names, or version."""


class TrainingError(DataError):
    """Training preconditions violated or training diverged."""


class RenderFailed(ExternalToolError):
    """The render subprocess failed, timed out, or produced no image."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr
