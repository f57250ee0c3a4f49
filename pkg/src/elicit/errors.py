"""Exception hierarchy shared by every stage of the engine."""

from __future__ import annotations


class ElicitError(Exception):
    """Base class for all engine errors."""


class ValidationFailure(ElicitError, ValueError):
    """A record or argument violates a declared invariant or precondition."""


# -- provider / gateway ------------------------------------------------------


class ProviderError(ElicitError):
    pass


class ProviderUnreachable(ProviderError):
    """Network failure, timeout, or a persistent server-side error."""


class AuthRejected(ProviderError):
    pass


class SchemaExhausted(ProviderError):
    """Every attempt produced output that failed schema validation."""

    def __init__(self, message: str, *, raw_response: str, attempts: int) -> None:
        super().__init__(message)
        self.raw_response = raw_response
        self.attempts = attempts


class DimensionMismatch(ElicitError, ValueError):
    pass


# -- generation stages -------------------------------------------------------


class DuplicateAgentNames(ElicitError):
    def __init__(self, names: list[str]) -> None:
        super().__init__(f"duplicate agent names: {', '.join(sorted(set(names)))}")
        self.names = names


class StepCountOutOfRange(ElicitError):
    pass


class TooManySlotFailures(ElicitError):
    pass


class MissingLabel(ElicitError):
    pass


# -- numerics ----------------------------------------------------------------


class DegenerateClustering(ElicitError):
    pass


class InsufficientClusters(ElicitError, ValueError):
    pass


class TooFewPoints(ElicitError, ValueError):
    pass


class UndefinedScore(ElicitError, ZeroDivisionError):
    pass


class UndefinedMetric(ElicitError, ZeroDivisionError):
    pass


class DegenerateVariance(ElicitError, ZeroDivisionError):
    pass


# -- run directory -----------------------------------------------------------


class ConfigError(ElicitError):
    pass


class CorruptManifest(ElicitError):
    pass


class ArtifactHashMismatch(ElicitError):
    pass


class MissingPriorStage(ElicitError):
    pass


class RunLocked(ElicitError):
    pass


class StageFailed(ElicitError):
    """Raised by the pipeline after the manifest has recorded a failed stage."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
