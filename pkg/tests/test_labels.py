import pytest

from pathgrouper.labels import (
    CANONICAL_ORDER,
    TumorGroup,
    UnknownLabelError,
    parse_tumor_group,
    render_tumor_group,
)


def test_vocabulary_is_exactly_nineteen():
    assert len(CANONICAL_ORDER) == 19
    assert len({g.value for g in CANONICAL_ORDER}) == 19


def test_parse_canonical_labels():
    assert parse_tumor_group("Breast") is TumorGroup.BREAST
    assert parse_tumor_group("MultipleMyeloma") is TumorGroup.MULTIPLE_MYELOMA


def test_parse_normalizes_case_and_whitespace():
    assert parse_tumor_group("  melanoma ") is TumorGroup.MELANOMA
    assert parse_tumor_group("SKIN") is TumorGroup.SKIN
    assert parse_tumor_group("primary   unknown") is TumorGroup.PRIMARY_UNKNOWN


def test_parse_aliases():
    assert parse_tumor_group("head and neck") is TumorGroup.HEAD_AND_NECK
    assert parse_tumor_group("Opthalmic") is TumorGroup.OPHTHALMIC
    assert parse_tumor_group("leukaemia") is TumorGroup.LEUKEMIA
    assert parse_tumor_group("multiple myeloma") is TumorGroup.MULTIPLE_MYELOMA
    assert parse_tumor_group("unknown primary") is TumorGroup.PRIMARY_UNKNOWN


def test_parse_rejects_unknown_labels():
    with pytest.raises(UnknownLabelError):
        parse_tumor_group("Kidney")
    with pytest.raises(UnknownLabelError):
        parse_tumor_group("")


@pytest.mark.parametrize("group", list(TumorGroup))
def test_round_trip(group):
    assert parse_tumor_group(render_tumor_group(group)) is group


@pytest.mark.parametrize("group", list(TumorGroup))
def test_display_name_parses_back(group):
    assert parse_tumor_group(group.display_name) is group


def test_canonical_order_indexes():
    assert TumorGroup.BREAST.canonical_index == 0
    assert TumorGroup.THYROID.canonical_index == 18
    assert TumorGroup.MELANOMA.canonical_index < TumorGroup.SKIN.canonical_index


def test_display_names():
    assert TumorGroup.HEAD_AND_NECK.display_name == "head and neck"
    assert TumorGroup.MULTIPLE_MYELOMA.display_name == "multiple myeloma"
    assert TumorGroup.LUNG.display_name == "lung"
