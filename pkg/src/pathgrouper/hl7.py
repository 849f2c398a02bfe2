"""HL7 v2 pipe-delimited message parsing and report extraction.

Only MSH, PID, OBR, and OBX are interpreted; every other segment is carried
through untouched. HL7 is treated purely as a transport for report text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime

from .reports import PathologyReport, ReportSource


class NotHl7Error(ValueError):
    pass


class MalformedSegmentError(ValueError):
    def __init__(self, index: int, segment: str):
        super().__init__(f"segment {index} is malformed: {segment!r}")
        self.index = index


class EncodingError(ValueError):
    pass


class NoReportTextError(ValueError):
    pass


class MissingIdentifierError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingChars:
    """The five MSH-2 delimiters (field comes from MSH-1)."""

    field: str = "|"
    component: str = "^"
    repetition: str = "~"
    escape: str = "\\"
    subcomponent: str = "&"


@dataclass(frozen=True)
class Hl7Message:
    # per segment: (3-char id, fields); fields[i] holds field i+1, and for MSH
    # field 1 is the separator itself per the standard's off-by-one convention
    segments: tuple[tuple[str, tuple[str, ...]], ...]
    encoding_chars: EncodingChars

    def field(self, segment_id: str, n: int, occurrence: int = 0) -> str | None:
        """Return field n of the given segment occurrence, or None if absent."""
        seen = 0
        for seg_id, fields in self.segments:
            if seg_id != segment_id:
                continue
            if seen == occurrence:
                return fields[n - 1] if 0 < n <= len(fields) else None
            seen += 1
        return None

    def component(self, value: str, k: int) -> str:
        parts = value.split(self.encoding_chars.component)
        return parts[k - 1] if 0 < k <= len(parts) else ""


_MLLP_FRAME_RE = re.compile(rb"\x0b(.*?)\x1c\r?", re.DOTALL)


def split_messages(raw: bytes) -> list[bytes]:
    """Split a file blob into individual message blobs.

    MLLP-framed batches (0x0B ... 0x1C 0x0D) are split on frames; bare
    concatenations are split before each segment-initial MSH.
    """
    if b"\x0b" in raw:
        return [frame for frame in _MLLP_FRAME_RE.findall(raw) if frame.strip()]
    normalized = raw.replace(b"\r\n", b"\r").replace(b"\n", b"\r")
    starts = [m.start() for m in re.finditer(rb"(?:(?<=\r)|\A)MSH", normalized)]
    if not starts:
        return [raw] if raw.strip() else []
    starts.append(len(normalized))
    return [normalized[a:b] for a, b in zip(starts, starts[1:]) if normalized[a:b].strip()]


def _decode(raw: bytes) -> str:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        text = raw.decode("latin-1")
    if "\x00" in text:
        raise EncodingError("input contains NUL bytes; not a supported text encoding")
    return text


def _unescape(value: str, enc: EncodingChars) -> str:
    """Decode the five single-character HL7 escape sequences."""
    e = enc.escape
    if e not in value:
        return value
    mapping = {"F": enc.field, "S": enc.component, "T": enc.subcomponent,
               "R": enc.repetition, "E": e}
    out: list[str] = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == e and i + 2 < len(value) and value[i + 2] == e and value[i + 1] in mapping:
            out.append(mapping[value[i + 1]])
            i += 3
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def parse_hl7(raw: bytes) -> Hl7Message:
    """Parse one message: CR/LF/CRLF segment terminators, MSH-declared delimiters."""
    if not raw or not raw.strip():
        raise NotHl7Error("empty input")
    text = _decode(raw)
    text = text.replace("\r\n", "\r").replace("\n", "\r")
    lines = [ln for ln in text.split("\r") if ln]
    if not lines or not lines[0].startswith("MSH"):
        raise NotHl7Error(f"message does not start with MSH: {lines[0][:12]!r}")
    msh = lines[0]
    if len(msh) < 8:
        raise NotHl7Error("MSH segment too short to declare delimiters")
    fs = msh[3]
    enc_field = msh.split(fs)[1] if fs in msh else ""
    if len(enc_field) < 4:
        raise NotHl7Error(f"MSH-2 must declare 4 encoding characters, got {enc_field!r}")
    enc = EncodingChars(field=fs, component=enc_field[0], repetition=enc_field[1],
                        escape=enc_field[2], subcomponent=enc_field[3])

    segments: list[tuple[str, tuple[str, ...]]] = []
    for index, line in enumerate(lines):
        if len(line) < 3:
            raise MalformedSegmentError(index, line)
        seg_id = line[:3]
        if index == 0:
            # fields[0] is the separator (MSH-1); MSH-2 stays raw, everything
            # else is unescaped
            parts = line.split(fs)
            fields = [fs, parts[1]] + [_unescape(p, enc) for p in parts[2:]]
        else:
            parts = line.split(fs)
            fields = [_unescape(p, enc) for p in parts[1:]]
        segments.append((seg_id, tuple(fields)))
    return Hl7Message(segments=tuple(segments), encoding_chars=enc)


def render_hl7(msg: Hl7Message) -> bytes:
    """Re-render with CR terminators; inverse of parse_hl7 for escape-free input."""
    fs = msg.encoding_chars.field
    lines: list[str] = []
    for i, (seg_id, fields) in enumerate(msg.segments):
        if i == 0:
            lines.append(seg_id + fs + fs.join(fields[1:]))
        else:
            lines.append(seg_id + fs + fs.join(fields))
    return ("\r".join(lines) + "\r").encode("utf-8")


_TEXT_VALUE_TYPES = {"TX", "ST", "FT", ""}


def _parse_hl7_timestamp(value: str) -> datetime | None:
    digits = value.split(".")[0].split("+")[0].split("-")[0]
    for fmt in ("%Y%m%d%H%M%S", "%Y%m%d%H%M", "%Y%m%d"):
        try:
            return datetime.strptime(digits, fmt)
        except ValueError:
            continue
    return None


def extract_report(msg: Hl7Message) -> PathologyReport:
    """Assemble a PathologyReport from OBX text, OBR-3/MSH-10 ids, and PID-3."""
    pieces: list[str] = []
    for seg_id, fields in msg.segments:
        if seg_id != "OBX":
            continue
        value_type = fields[1] if len(fields) > 1 else ""
        if value_type not in _TEXT_VALUE_TYPES:
            continue
        if len(fields) >= 5 and fields[4]:
            pieces.append(fields[4])
    if not pieces:
        raise NoReportTextError("no OBX segment carries report text")

    report_id = msg.component(msg.field("OBR", 3) or "", 1)
    if not report_id:
        report_id = msg.field("MSH", 10) or ""
    if not report_id:
        raise MissingIdentifierError("no report identifier in OBR-3 or MSH-10")

    patient_field = msg.field("PID", 3) or ""
    patient_id = msg.component(patient_field.split(msg.encoding_chars.repetition)[0], 1)
    if not patient_id:
        raise MissingIdentifierError("PID-3 carries no patient identifier")

    received_at = _parse_hl7_timestamp(msg.field("MSH", 7) or "")
    return PathologyReport(
        report_id=report_id,
        patient_id=patient_id,
        text="\n".join(pieces),
        source=ReportSource.HL7,
        received_at=received_at,
    )
