"""Line-delimited JSON record files for reports and labeled reports.

Record fields: report_id, text, optional patient_id, optional label, optional
label_provenance ("report_level" | "patient_level").
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .labels import UnknownLabelError, parse_tumor_group
from .reports import LabeledReport, LabelProvenance, PathologyReport, ReportSource


@dataclass(frozen=True)
class LineParseError:
    line: int
    message: str


def _record_from_obj(obj: dict, source: ReportSource) -> PathologyReport | LabeledReport:
    report = PathologyReport(
        report_id=str(obj["report_id"]),
        patient_id=str(obj.get("patient_id", "")),
        text=str(obj["text"]),
        source=source,
    )
    if "label" not in obj or obj["label"] is None:
        return report
    provenance = LabelProvenance(obj.get("label_provenance", "report_level"))
    return LabeledReport(report=report, label=parse_tumor_group(str(obj["label"])),
                         label_provenance=provenance)


def read_jsonl(path: str | Path,
               source: ReportSource = ReportSource.JSONL,
               ) -> tuple[list[PathologyReport | LabeledReport], list[LineParseError]]:
    """Read records in file order; bad lines are collected, not fatal."""
    records: list[PathologyReport | LabeledReport] = []
    errors: list[LineParseError] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not an object")
                records.append(_record_from_obj(obj, source))
            except (ValueError, KeyError, UnknownLabelError) as exc:
                errors.append(LineParseError(line=lineno, message=str(exc)))
    return records, errors


def record_to_obj(record: PathologyReport | LabeledReport) -> dict:
    if isinstance(record, LabeledReport):
        obj = record_to_obj(record.report)
        obj["label"] = record.label.value
        obj["label_provenance"] = record.label_provenance.value
        return obj
    obj = {"report_id": record.report_id, "text": record.text}
    if record.patient_id:
        obj["patient_id"] = record.patient_id
    return obj


def write_jsonl(path: str | Path, records: Iterable[PathologyReport | LabeledReport]) -> int:
    """Write records one object per line; returns the record count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_obj(record), ensure_ascii=False) + "\n")
            n += 1
    return n
