"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class ConceptGraderError(Exception):
    """Base class for all package errors."""


class GraphError(ConceptGraderError):
    pass


class ExportError(GraphError):
    pass


class DatasetError(ConceptGraderError):
    """Raised by ``load_dataset`` with every violation found, not just the first."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        summary = "; ".join(self.violations[:5])
        more = len(self.violations) - 5
        if more > 0:
            summary += f"; ... ({more} more)"
        super().__init__(f"{len(self.violations)} dataset violation(s): {summary}")


class InputError(ConceptGraderError):
    pass


class ConfigError(ConceptGraderError):
    pass


class TransportError(ConceptGraderError):
    """Backend still failing after all retries."""


class CredentialError(TransportError):
    """Authentication rejected; never retried."""


class CassetteMissError(ConceptGraderError):
    def __init__(self, request_hash: str):
        self.request_hash = request_hash
        super().__init__(f"cassette has no recording for request {request_hash}")


class MetricError(ConceptGraderError):
    """A metric is undefined for the given input (e.g. empty pair list)."""
