"""Exception hierarchy shared across the workbench.

Every module raises subclasses of WorkbenchError so the CLI can map
failures onto its exit-code contract (2 config, 3 budget, 4 backend).
"""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


# --- corpus ---

class ParseError(WorkbenchError):
    """A dataset record could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaViolation(WorkbenchError):
    """An entity type is not part of the active label schema."""


class SpanNotFound(WorkbenchError):
    """A gold span does not occur as a substring of its document text."""


# --- metrics ---

class UnknownDocId(WorkbenchError):
    """Predictions and gold documents do not line up by id."""


class UnknownType(WorkbenchError):
    """A prediction or gold mention uses a type outside the schema."""


class DegenerateInput(WorkbenchError):
    """Correlation input too small or without variance."""


# --- embeddings / gateway ---

class EmbeddingServiceError(WorkbenchError):
    """The embedding backend failed; carries context about which text."""


class TransportError(WorkbenchError):
    """Chat backend unreachable after all retries."""


class AuthError(WorkbenchError):
    """Chat backend rejected the configured credential."""


class BudgetExceeded(WorkbenchError):
    """The configured per-run LLM call budget would be exceeded."""


# --- instruction ---

class GenerationShortfall(WorkbenchError):
    """Strategy generation delivered fewer items than requested after retries."""


class MalformedGuidelineResponse(WorkbenchError):
    """A generated guideline section is missing a required subsection."""


# --- fir ---

class ReflectorParseFailure(WorkbenchError):
    """The reflector response could not be parsed into a gradient after retry."""


# --- cli ---

class ConfigError(WorkbenchError):
    """Run configuration is missing, malformed, or references unknown roles."""
