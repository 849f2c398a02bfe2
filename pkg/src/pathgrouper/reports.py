"""Report value objects shared across the pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import datetime

from .labels import TumorGroup


class ReportSource(enum.Enum):
    HL7 = "hl7"
    JSONL = "jsonl"
    SYNTHETIC = "synthetic"


class LabelProvenance(enum.Enum):
    REPORT_LEVEL = "report_level"
    # patient-level labels are assigned per patient, so individual reports may
    # carry the wrong group
    PATIENT_LEVEL = "patient_level"


@dataclass(frozen=True)
class PathologyReport:
    report_id: str
    patient_id: str
    text: str
    source: ReportSource
    received_at: datetime | None = None

    def __post_init__(self):
        if not self.report_id:
            raise ValueError("report_id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"report {self.report_id}: text is empty")


@dataclass(frozen=True)
class LabeledReport:
    report: PathologyReport
    label: TumorGroup
    label_provenance: LabelProvenance = LabelProvenance.REPORT_LEVEL

    @property
    def report_id(self) -> str:
        return self.report.report_id


def check_unique_ids(reports: list[PathologyReport] | list[LabeledReport]) -> None:
    """Reject duplicate report_ids within one batch."""
    seen: set[str] = set()
    for r in reports:
        if r.report_id in seen:
            raise ValueError(f"duplicate report_id in batch: {r.report_id}")
        seen.add(r.report_id)
