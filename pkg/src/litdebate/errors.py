"""Exception hierarchy shared by every pipeline stage.

The five direct subclasses of PipelineError map one-to-one onto the CLI
exit codes (config=2, resource=3, validation=4, provider=5, parse=6).
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PipelineError):
    """Bad or missing configuration: files, modes, template assets."""


class ResourceError(PipelineError):
    """A required input artifact (pool, case, run output) is absent."""


class ValidationError(PipelineError):
    """A contract or invariant does not hold."""


class ProviderError(PipelineError):
    """Transport or generation-provider failure."""


class ParseError(PipelineError):
    """A payload or response could not be parsed."""


class TimeLockError(ValidationError):
    """Evidence violates the temporal cutoff or reference-exclusion rule."""

    def __init__(self, message: str, violations: list | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class DigestMismatchError(ValidationError):
    """Stored digest disagrees with recomputed content digest."""


class BothSidesError(ValidationError):
    """Moderator synthesis failed to cite evidence from both pools."""


class ContextOverflowError(ProviderError):
    """Rendered context exceeds the configured model window."""


class ReplayMissError(ProviderError):
    """Replay mode was asked for an interaction that was never recorded."""


class UnknownStageError(ProviderError):
    """Scripted provider has no entry for the requested stage label."""


class PageFetchError(ProviderError):
    """Scholarly-index page request failed."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class WorkParseError(ParseError):
    """Malformed scholarly record or corrupt inverted-index abstract."""


class PersonaParseError(ParseError):
    """Persona induction response lacked a readable profile block."""


class TurnFormatError(ParseError):
    """Debate turn response did not follow the required turn format."""


class IhqParseError(ParseError):
    """Judge response did not contain a valid four-dimension score block."""
