"""Closed tumor-group vocabulary and label parsing."""

from __future__ import annotations

import enum
from importlib import resources


class UnknownLabelError(ValueError):
    """Raised when a string matches neither a canonical label nor an alias."""

    def __init__(self, label: str):
        super().__init__(f"unknown tumor group label: {label!r}")
        self.label = label


class TumorGroup(enum.Enum):
    """The 19 tumor groups; definition order is the canonical order."""

    BREAST = "Breast"
    COLORECTAL = "Colorectal"
    CERVIX = "Cervix"
    GASTROINTESTINAL = "Gastrointestinal"
    GENITOURINARY = "Genitourinary"
    GYNAECOLOGICAL = "Gynaecological"
    HEAD_AND_NECK = "HeadAndNeck"
    LEUKEMIA = "Leukemia"
    LUNG = "Lung"
    LYMPHOMA = "Lymphoma"
    MELANOMA = "Melanoma"
    MULTIPLE_MYELOMA = "MultipleMyeloma"
    NEUROENDOCRINE = "Neuroendocrine"
    OPHTHALMIC = "Ophthalmic"
    PROSTATE = "Prostate"
    PRIMARY_UNKNOWN = "PrimaryUnknown"
    SARCOMA = "Sarcoma"
    SKIN = "Skin"
    THYROID = "Thyroid"

    @property
    def canonical_index(self) -> int:
        return _CANONICAL_INDEX[self]

    @property
    def display_name(self) -> str:
        """Lowercase, space-separated form used when listing choices in prompts."""
        out = [self.value[0]]
        for ch in self.value[1:]:
            if ch.isupper():
                out.append(" ")
            out.append(ch)
        return "".join(out).lower()


CANONICAL_ORDER: tuple[TumorGroup, ...] = tuple(TumorGroup)
_CANONICAL_INDEX = {g: i for i, g in enumerate(CANONICAL_ORDER)}

VOCABULARY_FILE = "tumor_groups.txt"


def _normalize(s: str) -> str:
    return " ".join(s.split()).casefold()


def _load_alias_table() -> dict[str, TumorGroup]:
    """Read the shipped vocabulary file and build the normalized lookup table.

    The file is the source of record for aliases; canonical labels in it must
    agree exactly, in order, with the TumorGroup enum.
    """
    text = resources.files("pathgrouper.data").joinpath(VOCABULARY_FILE).read_text("utf-8")
    table: dict[str, TumorGroup] = {}
    canonical_seen: list[str] = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.rstrip("\n").split("\t")
        canonical, aliases = cells[0], cells[1:]
        group = TumorGroup(canonical)
        canonical_seen.append(canonical)
        table[_normalize(canonical)] = group
        # display form ("head and neck") must parse back to the label
        table.setdefault(_normalize(group.display_name), group)
        for alias in aliases:
            if alias.strip():
                table[_normalize(alias)] = group
    if canonical_seen != [g.value for g in CANONICAL_ORDER]:
        raise RuntimeError(f"{VOCABULARY_FILE} disagrees with the TumorGroup enum")
    return table


_ALIAS_TABLE = _load_alias_table()


def parse_tumor_group(s: str) -> TumorGroup:
    """Parse a label or alias, case-insensitively and whitespace-normalized."""
    group = _ALIAS_TABLE.get(_normalize(s))
    if group is None:
        raise UnknownLabelError(s)
    return group


def render_tumor_group(g: TumorGroup) -> str:
    return g.value
