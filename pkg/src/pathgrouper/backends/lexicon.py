"""Phrase-lexicon classifier: deterministic, configuration-driven ensemble slot."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from sklearn.base import BaseEstimator, ClassifierMixin

from ..labels import TumorGroup, parse_tumor_group
from ..voting import Prediction
from ..windows import TokenWindow, tokenize
from .base import TruncationCounter, argmax_group

DEFAULT_LEXICON_RESOURCE = "lexicon.tsv"


def load_lexicon(path: str | Path | None = None) -> dict[str, tuple[TumorGroup, float]]:
    """Read tab-separated (phrase, label, weight) rows; blank/# lines skipped."""
    if path is None:
        text = resources.files("pathgrouper.data").joinpath(DEFAULT_LEXICON_RESOURCE).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    entries: dict[str, tuple[TumorGroup, float]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        if len(cells) != 3:
            raise ValueError(f"lexicon line {lineno}: expected 3 tab-separated cells")
        phrase, label, weight = cells
        phrase = phrase.strip().casefold()
        if not phrase:
            raise ValueError(f"lexicon line {lineno}: empty phrase")
        w = float(weight)
        if w <= 0:
            raise ValueError(f"lexicon line {lineno}: weight must be positive")
        entries[phrase] = (parse_tumor_group(label), w)
    return entries


class LexiconClassifier(BaseEstimator, ClassifierMixin):
    """Scores token windows by weighted phrase matches.

    Matching is greedy over token positions, longest phrase first (then
    lexical order), and each token feeds at most one match. A window with no
    match at all falls back to PrimaryUnknown.
    """

    def __init__(self, source: str | Path | Mapping[str, tuple[TumorGroup, float]] | None = None,
                 backend_id: str = "lexicon", max_tokens: int = 512):
        self.source = source
        self.backend_id = backend_id
        self.max_tokens = max_tokens

    returns_scores = True

    def fit(self, X=None, y=None) -> "LexiconClassifier":
        """No training; resolves and indexes the configured lexicon."""
        if isinstance(self.source, Mapping):
            entries = dict(self.source)
        else:
            entries = load_lexicon(self.source)
        if not entries:
            raise ValueError("lexicon has no entries")
        # index by first token; longest phrase (in tokens) wins at a position
        index: dict[str, list[tuple[tuple[str, ...], TumorGroup, float]]] = {}
        for phrase, (group, weight) in entries.items():
            toks = tuple(tokenize(phrase))
            index.setdefault(toks[0], []).append((toks, group, weight))
        for bucket in index.values():
            bucket.sort(key=lambda item: (-len(item[0]), item[0]))
        self.index_ = index
        self.n_entries_ = len(entries)
        self.truncations = TruncationCounter()
        return self

    def _ensure_index(self) -> None:
        if not hasattr(self, "index_"):
            self.fit()

    def match_scores(self, lower_tokens: tuple[str, ...],
                     restrict_to: Iterable[TumorGroup] | None = None,
                     ) -> dict[TumorGroup, float]:
        """Total matched weight per group over the token sequence."""
        self._ensure_index()
        allowed = set(restrict_to) if restrict_to is not None else None
        scores: dict[TumorGroup, float] = {}
        consumed = [False] * len(lower_tokens)
        i = 0
        while i < len(lower_tokens):
            if consumed[i]:
                i += 1
                continue
            matched = False
            for toks, group, weight in self.index_.get(lower_tokens[i], ()):
                span = len(toks)
                if i + span > len(lower_tokens):
                    continue
                if any(consumed[i:i + span]):
                    continue
                if tuple(lower_tokens[i:i + span]) != toks:
                    continue
                if allowed is not None and group not in allowed:
                    continue
                scores[group] = scores.get(group, 0.0) + weight
                for j in range(i, i + span):
                    consumed[j] = True
                i += span
                matched = True
                break
            if not matched:
                i += 1
        return scores

    def classify(self, window: TokenWindow) -> Prediction:
        self._ensure_index()
        if len(window.tokens) > self.max_tokens:
            self.truncations.bump()
            window = window.truncated(self.max_tokens)
        scores = self.match_scores(window.lower_tokens)
        if not scores:
            return Prediction(group=TumorGroup.PRIMARY_UNKNOWN,
                              backend_id=self.backend_id, section=window.section)
        total = sum(scores.values())
        dist = {g: s / total for g, s in scores.items()}
        return Prediction(group=argmax_group(dist), backend_id=self.backend_id,
                          section=window.section, scores=dist)

    def predict(self, X: Iterable[str | Iterable[str]]) -> list[str]:
        """sklearn-style batch prediction over raw texts or token sequences."""
        self._ensure_index()
        out: list[str] = []
        for item in X:
            tokens = tokenize(item) if isinstance(item, str) else list(item)
            lower = tuple(t.casefold() for t in tokens)
            scores = self.match_scores(lower)
            group = argmax_group(scores) if scores else TumorGroup.PRIMARY_UNKNOWN
            out.append(group.value)
        return out
