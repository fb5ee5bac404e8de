"""Exception types shared across the package."""

from __future__ import annotations


class SqlScoutError(Exception):
    """Base class for all package errors."""


class NotFoundError(SqlScoutError):
    """Database location does not exist or is unreachable."""


class CorruptDatabaseError(SqlScoutError):
    """The file at the location is not a usable database."""


class UnsupportedDialectError(SqlScoutError):
    """The requested backend dialect has no execution support."""


class QueryFailedError(SqlScoutError):
    """Catalog introspection failed."""


class LlmError(SqlScoutError):
    """LLM backend failure.

    ``kind`` is one of ``transport``, ``protocol``, ``exhausted-retries``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message


class ScriptMismatch(SqlScoutError):
    """A scripted-backend request did not satisfy the step's matcher."""

    def __init__(self, step: int, missing: str):
        super().__init__(f"script step {step}: request does not contain {missing!r}")
        self.step = step
        self.missing = missing


class ScriptExhausted(SqlScoutError):
    """More chat calls were made than the script has steps."""


class TranspilationFailed(SqlScoutError):
    """No verified SQL could be produced and the fallback also failed."""


class SpawnFailed(SqlScoutError):
    """The sandbox worker process could not be started."""


class SandboxDead(SqlScoutError):
    """The sandbox worker stopped responding."""
