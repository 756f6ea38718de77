"""Exception hierarchy shared across the needle subsystems.

Every operational failure raises a subclass of :class:`NeedleError` so
callers (API handlers, CLI) can map failures to status codes uniformly.
"""

from __future__ import annotations


class NeedleError(Exception):
    """Base class for all needle errors."""


# --- catalog ---------------------------------------------------------------

class PathNotFound(NeedleError):
    pass


class NotADirectory(NeedleError):
    pass


class PermissionDenied(NeedleError):
    pass


class UnknownDirectory(NeedleError):
    pass


class UnknownEmbedder(NeedleError):
    pass


# --- vector store ----------------------------------------------------------

class UnknownCollection(NeedleError):
    pass


class CollectionExistsWithDifferentParams(NeedleError):
    pass


class InvalidDim(NeedleError):
    pass


class DimensionMismatch(NeedleError):
    pass


class DuplicateId(NeedleError):
    pass


class NonFiniteComponent(NeedleError):
    pass


# --- embedder registry -----------------------------------------------------

class RegistryParseError(NeedleError):
    """embedders.json failed to parse; message carries line/field details."""


class DuplicateName(NeedleError):
    pass


class DimMismatchWithExistingCollection(NeedleError):
    pass


class BatchTooLarge(NeedleError):
    pass


class EmbedderUnavailable(NeedleError):
    pass


# --- generator hub ---------------------------------------------------------

class NoEnabledEngines(NeedleError):
    pass


class AllEnginesFailed(NeedleError):
    """Every enabled engine failed; `causes` maps engine name to its error."""

    def __init__(self, causes: dict[str, str]):
        self.causes = dict(causes)
        detail = "; ".join(f"{name}: {msg}" for name, msg in self.causes.items())
        super().__init__(f"all engines failed ({detail})")


class EngineTimeout(NeedleError):
    pass


class StaleRevision(NeedleError):
    """Config revision token does not match; reload and retry."""


class BadResponse(NeedleError):
    pass


class HttpError(NeedleError):
    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(message or f"HTTP {status}")


# --- fusion ----------------------------------------------------------------

class MissingWeight(NeedleError):
    pass


class TooFewPoints(NeedleError):
    pass


class MisalignedEmbeddings(NeedleError):
    pass


# --- benchmark -------------------------------------------------------------

class EmptyRelevantSet(NeedleError):
    pass
