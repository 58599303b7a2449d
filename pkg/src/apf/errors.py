"""Exception hierarchy.

Two roots matter to callers: :class:`DataError` (bad inputs, unusable
formulations, malformed model output) and :class:`ProviderError` (the
chat-completion backend misbehaved). The CLI maps them to exit codes 2 and 3.
"""

from __future__ import annotations


class ApfError(Exception):
    """Base class for every error raised by this package."""


class DataError(ApfError):
    pass


class ProviderError(ApfError):
    pass


# formulation IR


class FormulationSyntaxError(DataError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class InvariantError(DataError, ValueError):
    """A value was well-formed but broke a domain invariant (e.g. lo >= hi)."""


class EvaluationError(DataError):
    def __init__(self, message: str, instance_id: str | None = None):
        self.detail = message
        self.instance_id = instance_id
        where = f" (instance {instance_id!r})" if instance_id is not None else ""
        super().__init__(f"{message}{where}")

    def with_instance(self, instance_id: str) -> "EvaluationError":
        self.instance_id = instance_id
        self.args = (f"{self.detail} (instance {instance_id!r})",)
        return self


class EmptyBand(EvaluationError):
    def __init__(self, message: str, instance_id: str | None = None, band=None):
        super().__init__(message, instance_id)
        self.band = band


class NonFinite(EvaluationError):
    pass


# scoring


class IdMismatch(DataError):
    pass


class DegenerateRanking(DataError):
    pass


class NoObjectives(DataError):
    pass


class NoConstraints(DataError):
    pass


class LengthMismatch(DataError):
    pass


class AlphaOutOfRange(DataError, ValueError):
    pass


# prompts and response parsing


class EmptyRequirementSet(DataError, ValueError):
    pass


class TooFewInstances(DataError, ValueError):
    pass


class PromptBudgetExceeded(DataError):
    def __init__(self, size: int, budget: int):
        super().__init__(f"prompt has {size} characters, budget is {budget}")
        self.size = size
        self.budget = budget


class ResponseParseError(DataError):
    pass


class NoJsonFound(ResponseParseError):
    pass


class AmbiguousJson(ResponseParseError):
    pass


class SchemaViolation(ResponseParseError):
    pass


class IndexCoverage(ResponseParseError):
    def __init__(self, missing, duplicate, extra=()):
        self.missing = sorted(missing)
        self.duplicate = sorted(duplicate)
        self.extra = sorted(extra)
        super().__init__(
            f"requirement_index coverage: missing={self.missing} "
            f"duplicate={self.duplicate} out_of_range={self.extra}"
        )


class NotAPermutation(ResponseParseError):
    def __init__(self, missing, extra, duplicate=()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        self.duplicate = sorted(duplicate)
        super().__init__(
            f"not a permutation: missing={self.missing} extra={self.extra} "
            f"duplicate={self.duplicate}"
        )


# providers


class HttpError(ProviderError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class ExhaustedRetries(ProviderError):
    def __init__(self, attempts: int, last_status: int | None, last_error: str = ""):
        super().__init__(
            f"gave up after {attempts} attempts (last status {last_status}) {last_error}".rstrip()
        )
        self.attempts = attempts
        self.last_status = last_status
        self.last_error = last_error


class ProviderTimeout(ExhaustedRetries):
    pass


# synthbench / pipeline


class NoEligibleItem(DataError):
    pass


class RoundTripError(DataError):
    def __init__(self, record_id: str, detail: str):
        super().__init__(f"record {record_id}: {detail}")
        self.record_id = record_id


class OutputExists(ApfError):
    """A stage would overwrite an existing file without ``--force``."""

    def __init__(self, path):
        super().__init__(f"{path} already exists (use --force to overwrite)")
        self.path = path
