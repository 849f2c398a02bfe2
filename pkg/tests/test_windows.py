import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathgrouper.reports import PathologyReport, ReportSource
from pathgrouper.windows import TokenWindow, WindowSection, tokenize, tokenize_spans, windows


def _report(text: str) -> PathologyReport:
    return PathologyReport(report_id="r1", patient_id="p1", text=text,
                           source=ReportSource.SYNTHETIC)


def test_tokenize_whitespace_splitting():
    text = "skin left lateral breast squamous cell carcinoma"
    assert tokenize(text) == ["skin", "left", "lateral", "breast",
                              "squamous", "cell", "carcinoma"]
    assert len(tokenize(text)) == 7


def test_tokenize_empty():
    assert tokenize("") == []
    assert tokenize("   \n\t ") == []


def test_tokenize_splits_edge_punctuation():
    assert tokenize("carcinoma.") == ["carcinoma", "."]
    assert tokenize("(left)") == ["(", "left", ")"]
    assert tokenize("grade: 2,") == ["grade", ":", "2", ","]


def test_tokenize_keeps_interior_punctuation():
    assert tokenize("non-melanoma") == ["non-melanoma"]
    assert tokenize("ki-67") == ["ki-67"]


def test_tokenize_spans_are_exact():
    text = "alpha (beta)."
    for token, start, end in tokenize_spans(text):
        assert text[start:end] == token


def test_windows_long_report():
    text = " ".join(f"tok{i}" for i in range(1200))
    top, bottom = windows(_report(text), 512)
    assert list(top.tokens) == [f"tok{i}" for i in range(512)]
    assert list(bottom.tokens) == [f"tok{i}" for i in range(688, 1200)]
    assert top.section is WindowSection.TOP
    assert bottom.section is WindowSection.BOTTOM
    assert top.origin_report_id == bottom.origin_report_id == "r1"


def test_windows_short_report_duplicates_content():
    text = " ".join(f"tok{i}" for i in range(300))
    top, bottom = windows(_report(text), 512)
    assert top.tokens == bottom.tokens
    assert len(top.tokens) == 300


def test_windows_char_spans_slice_source_text():
    text = "one two three four five"
    top, bottom = windows(_report(text), 2)
    assert text[top.char_start:top.char_end] == "one two"
    assert text[bottom.char_start:bottom.char_end] == "four five"


def test_windows_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        windows(_report("a b c"), 0)


def test_truncated_keeps_prefix_for_top_suffix_for_bottom():
    top = TokenWindow(WindowSection.TOP, tuple("abcdef"), "r1")
    bottom = TokenWindow(WindowSection.BOTTOM, tuple("abcdef"), "r1")
    assert top.truncated(3).tokens == ("a", "b", "c")
    assert bottom.truncated(3).tokens == ("d", "e", "f")
    assert top.truncated(10) is top


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 9999), min_size=1, max_size=600),
       st.integers(1, 256))
def test_windows_cover_whole_report_when_short_enough(values, window_tokens):
    # whenever n <= 2 * window_tokens the two windows jointly cover every token
    tokens = [f"w{v}" for v in values]
    text = " ".join(tokens)
    top, bottom = windows(_report(text), window_tokens)
    n = len(tokens)
    k = min(window_tokens, n)
    assert list(top.tokens) == tokens[:k]
    assert list(bottom.tokens) == tokens[n - k:]
    if n <= 2 * window_tokens:
        covered = set(range(k)) | set(range(n - k, n))
        assert covered == set(range(n))


@settings(max_examples=100, deadline=None)
@given(st.text(min_size=0, max_size=400))
def test_tokenize_deterministic_and_span_consistent(text):
    first = tokenize_spans(text)
    second = tokenize_spans(text)
    assert first == second
    for token, start, end in first:
        assert text[start:end] == token
        assert token.strip() == token
        assert token
