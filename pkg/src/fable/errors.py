"""Exception hierarchy shared across the package."""


class FableError(Exception):
    """Base class for all errors raised by fable."""


class NotFoundError(FableError, KeyError):
    """A node, chunk or document key does not resolve."""

    def __str__(self):
        return Exception.__str__(self)


class InvalidArgumentError(FableError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(FableError, ValueError):
    """Bad or unusable configuration (detected at construction time)."""


class IntegrityError(FableError):
    """A backend response would drop, duplicate or reorder text."""


class StructuringError(FableError):
    """A structuring outline could not be repaired into a valid tree."""


class PersistenceError(FableError):
    """Base class for forest / vector store file errors."""


class FormatVersionError(PersistenceError):
    """The file was written by an unsupported format version."""


class MalformedFileError(PersistenceError):
    """The file cannot be parsed."""


class InvariantError(FableError, ValueError):
    """A tree or forest breaks a structural invariant."""


class InvariantViolationError(PersistenceError, InvariantError):
    """The file parses but the decoded structure breaks an invariant."""


class GatewayError(FableError):
    """Terminal failure of an LLM gateway call."""


class RetriableGatewayError(GatewayError):
    """Transient transport failure (network, timeout, 5xx)."""


class SchemaViolationError(GatewayError):
    """The backend kept answering with output that fails the role schema."""


class ContextOverflowError(GatewayError):
    """Rendered prompt exceeds the backend's context window; nothing was sent."""
