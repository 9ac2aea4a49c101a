class PersonaSearchError(Exception):
    """Base class for all package errors."""


class ConfigError(PersonaSearchError, ValueError):
    pass


class VocabularyError(PersonaSearchError, ValueError):
    """A facet token is not in its registered vocabulary."""


class ConflictError(PersonaSearchError, ValueError):
    """An entity with the same identity is already registered."""


class NotFoundError(PersonaSearchError, KeyError):
    pass


class MemoryUpdateError(PersonaSearchError, ValueError):
    """A memory update was rejected (e.g. missing provenance)."""


class CorpusError(PersonaSearchError, ValueError):
    """Corpus indexing failed (empty corpus, duplicate ids)."""


class AgentStepError(PersonaSearchError, RuntimeError):
    """A persona agent step failed; carries the persona id."""

    def __init__(self, persona_id: str, message: str):
        super().__init__(f"agent step failed for persona {persona_id}: {message}")
        self.persona_id = persona_id


class ProtocolError(PersonaSearchError, ValueError):
    pass


class EstimationError(PersonaSearchError, ValueError):
    """Off-policy estimate is undefined for the given logs."""
