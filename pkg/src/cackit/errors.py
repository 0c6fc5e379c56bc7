"""Exception taxonomy shared across the toolkit.

Every error that callers are expected to handle has its own class so that
pipeline stages can map failures to exclusion-log reasons without string
matching.
"""

from __future__ import annotations


class CacError(Exception):
    """Base class for all toolkit errors."""


# --- volume ingest ---------------------------------------------------------

class MissingMandatoryTag(CacError):
    def __init__(self, series_uid: str, field: str):
        self.series_uid = series_uid
        self.field = field
        super().__init__(f"series {series_uid!r} lacks mandatory field {field!r}")


class UnreadableSource(CacError):
    pass


class NoEligibleSeries(CacError):
    """Every candidate series of a study was filtered out."""

    def __init__(self, study_uid: str, reasons: dict[str, str]):
        self.study_uid = study_uid
        self.reasons = dict(reasons)
        detail = "; ".join(f"{k}: {v}" for k, v in sorted(reasons.items()))
        super().__init__(f"no eligible series for study {study_uid!r} ({detail})")


class InconsistentGeometry(CacError):
    pass


class MissingSlices(CacError):
    pass


# --- masks -----------------------------------------------------------------

class DimsMismatch(CacError):
    pass


class UidMismatch(CacError):
    pass


class MalformedRuns(CacError):
    pass


class RoiOutOfBounds(CacError):
    pass


class RunnerFailed(CacError):
    def __init__(self, message: str, diagnostics: str = ""):
        self.diagnostics = diagnostics
        super().__init__(message if not diagnostics else f"{message}\n{diagnostics}")


class InvalidModelOutput(CacError):
    pass


# --- report extraction / sampling ------------------------------------------

class SampleTooLarge(CacError):
    pass


# --- statistics ------------------------------------------------------------

class EmptyGroup(CacError):
    pass


class NoEvents(CacError):
    pass


class Separation(CacError):
    """Monotone Cox partial likelihood; the hazard ratio is infinite.

    ``direction`` is +1 when the non-reference group's hazard diverges to
    +infinity, -1 for the reciprocal case.
    """

    def __init__(self, direction: int, message: str = "monotone partial likelihood"):
        self.direction = direction
        self.infinite_hr = True
        super().__init__(f"{message} (direction {direction:+d})")


class DegenerateMarginals(CacError):
    pass


class ZeroVariance(CacError):
    pass


class NegativeDuration(CacError):
    pass


# --- review workflow -------------------------------------------------------

class QueueEmpty(CacError):
    pass


class NotAssigned(CacError):
    pass


class AlreadyVerdicted(CacError):
    pass


class SliceOutOfRange(CacError):
    pass


# --- pipeline --------------------------------------------------------------

class PipelineStageError(CacError):
    def __init__(self, stage: str, study_uid: str | None, cause: Exception):
        self.stage = stage
        self.study_uid = study_uid
        self.cause = cause
        where = f" (study {study_uid})" if study_uid else ""
        super().__init__(f"stage {stage!r}{where}: {cause}")
