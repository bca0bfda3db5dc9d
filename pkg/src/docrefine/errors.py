"""Exception hierarchy.

Tool-side failures are never raised; they travel as ToolResponse values.
``InfrastructureError`` subclasses abort a whole run, everything else derived
from ``DraftError`` aborts only the tool being refined.
"""


class DraftError(Exception):
    pass


class SchemaError(DraftError, ValueError):
    """Input file violates its schema."""


class InvariantViolation(DraftError, ValueError):
    pass


class DomainError(DraftError, ValueError):
    """Metric called outside its domain (zero vector, dimension mismatch, empty text)."""


class GatewayError(DraftError):
    pass


class RateLimited(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class TapeExhausted(GatewayError):
    pass


class TapeMismatch(GatewayError):
    pass


class AgentOutputError(DraftError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ReplyParseError(AgentOutputError):
    pass


class InfrastructureError(DraftError):
    """Misconfiguration that makes every tool fail (missing credentials, bad fixtures)."""


class FixtureError(InfrastructureError, SchemaError):
    pass
