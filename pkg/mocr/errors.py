# mocr/errors.py
from __future__ import annotations

from typing import Optional


class MocrError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(MocrError):
    """Unknown keys, bad values, or a prompt template missing a placeholder."""


class DataError(MocrError):
    """Input data could not be understood. Carries an optional position."""

    def __init__(
        self,
        message: str,
        *,
        line: Optional[int] = None,
        column: Optional[int] = None,
        path: Optional[str] = None,
    ) -> None:
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        super().__init__(self._format())

    def _format(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.column is not None:
            where.append(f"column {self.column}")
        if self.path:
            where.append(f"at {self.path}")
        return f"{self.message} ({', '.join(where)})" if where else self.message


class DocumentParseError(DataError):
    pass


class DocumentInvalidError(MocrError):
    """serialize_document was handed a document that fails validation."""

    def __init__(self, violations) -> None:
        self.violations = list(violations)
        first = self.violations[0] if self.violations else None
        super().__init__(f"document has {len(self.violations)} violation(s); first: {first}")


class SvgParseError(DataError):
    pass


class SvgStructureError(DataError):
    pass


class PathDataError(DataError):
    pass


class LogCorruptionError(DataError):
    pass


class NoBattlesError(DataError):
    pass


class NoAssetsError(DataError):
    pass


class EloInputError(MocrError, ValueError):
    """Non-finite ratings, bad scores, or an invalid EloConfig."""


class SamplingSpecError(MocrError, ValueError):
    pass


class RenderError(MocrError):
    pass


class DimensionMismatchError(MocrError, ValueError):
    pass


class TaskError(MocrError):
    """A battle could not start: missing transcription or unloadable image."""


class JudgeError(MocrError):
    """The judge could not produce a verdict. The battle is excluded, never tied."""

    def __init__(self, message: str, *, attempts: int = 0, raw: Optional[str] = None) -> None:
        self.attempts = attempts
        self.raw = raw
        super().__init__(message)


class TransportError(JudgeError):
    pass


class PermanentJudgeError(JudgeError):
    pass


class CredentialError(PermanentJudgeError):
    pass


class UnparseableVerdictError(JudgeError):
    pass
