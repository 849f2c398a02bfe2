"""Deterministic tokenization and top/bottom window extraction.

Tokens are whitespace units with leading/trailing punctuation split off; they
are deliberately model-agnostic. Backends that re-tokenize internally can use
the window's character span as a hint instead of the token list.
"""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass
from functools import cached_property

from .reports import PathologyReport

_WORD_RE = re.compile(r"\S+")


class WindowSection(enum.Enum):
    TOP = "top"
    BOTTOM = "bottom"


@dataclass(frozen=True)
class TokenWindow:
    section: WindowSection
    tokens: tuple[str, ...]
    origin_report_id: str
    char_start: int = 0
    char_end: int = 0

    @cached_property
    def lower_tokens(self) -> tuple[str, ...]:
        return tuple(t.casefold() for t in self.tokens)

    def truncated(self, max_tokens: int) -> "TokenWindow":
        """Cap the token count; tops keep their prefix, bottoms their suffix."""
        if len(self.tokens) <= max_tokens:
            return self
        if self.section is WindowSection.TOP:
            kept = self.tokens[:max_tokens]
        else:
            kept = self.tokens[len(self.tokens) - max_tokens:]
        return TokenWindow(self.section, kept, self.origin_report_id,
                           self.char_start, self.char_end)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokenize with character offsets: (token, start, end) per token."""
    out: list[tuple[str, int, int]] = []
    for m in _WORD_RE.finditer(text):
        chunk, start = m.group(), m.start()
        lo, hi = 0, len(chunk)
        while lo < hi and _is_punct(chunk[lo]):
            out.append((chunk[lo], start + lo, start + lo + 1))
            lo += 1
        trailing: list[tuple[str, int, int]] = []
        while hi > lo and _is_punct(chunk[hi - 1]):
            trailing.append((chunk[hi - 1], start + hi - 1, start + hi))
            hi -= 1
        if hi > lo:
            out.append((chunk[lo:hi], start + lo, start + hi))
        out.extend(reversed(trailing))
    return out


def tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in tokenize_spans(text)]


def windows(report: PathologyReport, window_tokens: int) -> tuple[TokenWindow, TokenWindow]:
    """First and last window_tokens tokens; short reports duplicate content.

    Every ensemble member must always have something to vote on, so when the
    report fits inside one window both sections carry the full token list.
    """
    if window_tokens < 1:
        raise ValueError("window_tokens must be >= 1")
    spans = tokenize_spans(report.text)
    n = len(spans)
    k = min(window_tokens, n)
    top_spans = spans[:k]
    bottom_spans = spans[n - k:]

    def _window(section: WindowSection, part: list[tuple[str, int, int]]) -> TokenWindow:
        if not part:
            return TokenWindow(section, (), report.report_id)
        return TokenWindow(
            section,
            tuple(tok for tok, _, _ in part),
            report.report_id,
            char_start=part[0][1],
            char_end=part[-1][2],
        )

    return _window(WindowSection.TOP, top_spans), _window(WindowSection.BOTTOM, bottom_spans)
