"""Exception hierarchy shared across the package."""


class SciteamError(Exception):
    """Base class for all package errors."""


class ConfigError(SciteamError):
    """Invalid configuration value; message carries the field path."""


class CorpusError(SciteamError):
    """Corpus file could not be ingested."""


class EmptyCorpusError(CorpusError):
    """A corpus file yielded zero valid records."""


class TemplateError(SciteamError):
    """Prompt template references an unknown placeholder or failed to load."""


class TransportError(SciteamError):
    """Retryable network failure talking to an HTTP backend."""


class ScriptError(SciteamError):
    """Scripted backend has no entry for the requested call key."""


class CompletionError(SciteamError):
    """Chat backend returned an empty completion even after a re-ask."""


class ParseError(SciteamError):
    """Structured response could not be parsed; keeps the raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class VectorStoreError(SciteamError):
    """Vector index misuse: dims mismatch, duplicate id, bad persistence."""


class MetricError(SciteamError):
    """Novelty metric undefined for the given inputs."""


class ReviewError(MetricError):
    """LLM review response unusable after a re-prompt."""


class InfeasibleTeamError(SciteamError):
    """Team composition constraints cannot be met with the candidate pool."""


class PipelineError(SciteamError):
    """A pipeline stage failed fatally."""
