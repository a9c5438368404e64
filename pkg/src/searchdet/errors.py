"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so layers should raise the
most specific type that applies rather than bare Exception.
"""

from __future__ import annotations


class SearchDetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SearchDetError):
    """Invalid run configuration or CLI usage."""


class RetrievalError(SearchDetError):
    """Search, download, or negative-query generation failed."""


class EmptyResultError(RetrievalError):
    """A query yielded zero decodable positive images."""


class FormatError(RetrievalError):
    """An upstream payload could not be parsed; keeps the raw text."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class IntegrityError(SearchDetError):
    """Cached bytes do not match the hash recorded in a manifest."""


class BackendError(SearchDetError):
    """An embedding or segmentation backend is unavailable or failed."""


class InputError(SearchDetError):
    """Undecodable image, or mask/raster shape mismatch."""


class ValidationError(SearchDetError):
    """Dataset or detection references are inconsistent."""


class EvaluationError(SearchDetError):
    """Metric computation could not proceed."""


class PipelineError(SearchDetError):
    """Wraps a stage failure with the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.__cause__ = cause
