"""Multinomial naive Bayes over window tokens, with add-alpha smoothing.

This is the trainable stand-in for a fine-tuned transformer slot: cheap,
deterministic, and good enough to exercise the voting machinery at desk scale.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from ..labels import TumorGroup, parse_tumor_group
from ..reports import LabeledReport
from ..voting import Prediction
from ..windows import TokenWindow, WindowSection, tokenize, windows
from .base import TruncationCounter, argmax_group

MODEL_FORMAT = "pathgrouper-naive-bayes"
MODEL_FORMAT_VERSION = 1


class EmptyCorpusError(ValueError):
    pass


class InvalidAlphaError(ValueError):
    pass


def _features(lower_tokens: Sequence[str], kind: str, binarize: bool) -> list[str]:
    feats = list(lower_tokens)
    if kind == "unigram_bigram":
        feats += [f"{a} {b}" for a, b in zip(lower_tokens, lower_tokens[1:])]
    elif kind != "unigram":
        raise ValueError(f"unknown feature kind: {kind}")
    if binarize:
        feats = sorted(set(feats))
    return feats


class WindowNaiveBayes(BaseEstimator, ClassifierMixin):
    """Multinomial NB; accepts raw texts or pre-tokenized sequences."""

    def __init__(self, alpha: float = 1.0, features: str = "unigram",
                 binarize: bool = False, backend_id: str = "nb",
                 max_tokens: int = 512):
        self.alpha = alpha
        self.features = features
        self.binarize = binarize
        self.backend_id = backend_id
        self.max_tokens = max_tokens

    returns_scores = True

    def _extract(self, item: str | Iterable[str]) -> list[str]:
        tokens = tokenize(item) if isinstance(item, str) else list(item)
        return _features([t.casefold() for t in tokens], self.features, self.binarize)

    def fit(self, X: Sequence[str | Iterable[str]], y: Sequence[TumorGroup | str]) -> "WindowNaiveBayes":
        if self.alpha <= 0:
            raise InvalidAlphaError(f"smoothing alpha must be positive, got {self.alpha}")
        if len(X) == 0:
            raise EmptyCorpusError("training corpus is empty")
        if len(X) != len(y):
            raise ValueError("X and y length mismatch")

        doc_counts: dict[TumorGroup, int] = {}
        feat_counts: dict[TumorGroup, dict[str, int]] = {}
        vocabulary: set[str] = set()
        for item, label in zip(X, y):
            group = label if isinstance(label, TumorGroup) else parse_tumor_group(str(label))
            doc_counts[group] = doc_counts.get(group, 0) + 1
            per_class = feat_counts.setdefault(group, {})
            for feat in self._extract(item):
                per_class[feat] = per_class.get(feat, 0) + 1
                vocabulary.add(feat)

        self.classes_ = sorted(doc_counts, key=lambda g: g.canonical_index)
        self.vocabulary_ = vocabulary
        self.doc_counts_ = doc_counts
        self.feat_counts_ = feat_counts
        self._finalize()
        self.truncations = TruncationCounter()
        return self

    def _finalize(self) -> None:
        n_docs = sum(self.doc_counts_.values())
        v = len(self.vocabulary_)
        self.class_log_prior_ = {
            g: math.log(self.doc_counts_[g] / n_docs) for g in self.classes_}
        self.feature_log_prob_ = {}
        self._oov_log_prob_ = {}
        for g in self.classes_:
            per_class = self.feat_counts_.get(g, {})
            total = sum(per_class.values())
            denom = total + self.alpha * v
            self.feature_log_prob_[g] = {
                f: math.log((c + self.alpha) / denom) for f, c in per_class.items()}
            # any in-vocabulary feature unseen for this class
            self._oov_log_prob_[g] = math.log(self.alpha / denom)

    def _check_fitted(self) -> None:
        if not hasattr(self, "classes_"):
            raise NotFittedError("WindowNaiveBayes must be fit before use")

    def joint_log_likelihood(self, feats: Sequence[str]) -> dict[TumorGroup, float]:
        self._check_fitted()
        known = [f for f in feats if f in self.vocabulary_]
        out: dict[TumorGroup, float] = {}
        for g in self.classes_:
            per_class = self.feature_log_prob_[g]
            oov = self._oov_log_prob_[g]
            score = self.class_log_prior_[g]
            for f in known:
                score += per_class.get(f, oov)
            out[g] = score
        return out

    def posteriors(self, item: str | Iterable[str]) -> dict[TumorGroup, float]:
        jll = self.joint_log_likelihood(self._extract(item))
        peak = max(jll.values())
        exp = {g: math.exp(s - peak) for g, s in jll.items()}
        z = sum(exp.values())
        return {g: e / z for g, e in exp.items()}

    def predict(self, X: Sequence[str | Iterable[str]]) -> list[str]:
        self._check_fitted()
        return [argmax_group(self.joint_log_likelihood(self._extract(item))).value
                for item in X]

    def predict_proba(self, X: Sequence[str | Iterable[str]]) -> list[dict[str, float]]:
        return [{g.value: p for g, p in self.posteriors(item).items()} for item in X]

    def classify(self, window: TokenWindow) -> Prediction:
        self._check_fitted()
        if len(window.tokens) > self.max_tokens:
            self.truncations.bump()
            window = window.truncated(self.max_tokens)
        scores = self.posteriors(window.lower_tokens)
        return Prediction(group=argmax_group(scores), backend_id=self.backend_id,
                          section=window.section, scores=scores)

    # -- persistence: versioned text format storing exact integer counts ----

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        payload = {
            "format": MODEL_FORMAT,
            "format_version": MODEL_FORMAT_VERSION,
            "alpha": self.alpha,
            "features": self.features,
            "binarize": self.binarize,
            "backend_id": self.backend_id,
            "max_tokens": self.max_tokens,
            "doc_counts": {g.value: c for g, c in sorted(
                self.doc_counts_.items(), key=lambda kv: kv[0].canonical_index)},
            "feat_counts": {g.value: dict(sorted(self.feat_counts_.get(g, {}).items()))
                            for g in self.classes_},
            "vocabulary": sorted(self.vocabulary_),
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WindowNaiveBayes":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
        if payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format_version {payload.get('format_version')}")
        model = cls(alpha=payload["alpha"], features=payload["features"],
                    binarize=payload["binarize"], backend_id=payload["backend_id"],
                    max_tokens=payload["max_tokens"])
        model.doc_counts_ = {TumorGroup(g): c for g, c in payload["doc_counts"].items()}
        model.feat_counts_ = {TumorGroup(g): dict(counts)
                              for g, counts in payload["feat_counts"].items()}
        model.vocabulary_ = set(payload["vocabulary"])
        model.classes_ = sorted(model.doc_counts_, key=lambda g: g.canonical_index)
        model._finalize()
        model.truncations = TruncationCounter()
        return model


def train_naive_bayes(corpus: Sequence[LabeledReport], section: WindowSection,
                      alpha: float = 1.0, features: str = "unigram",
                      binarize: bool = False, window_tokens: int = 512,
                      backend_id: str = "nb") -> WindowNaiveBayes:
    """Fit a model on the designated window of each labeled report."""
    if alpha <= 0:
        raise InvalidAlphaError(f"smoothing alpha must be positive, got {alpha}")
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    X: list[tuple[str, ...]] = []
    y: list[TumorGroup] = []
    for labeled in corpus:
        top, bottom = windows(labeled.report, window_tokens)
        window = top if section is WindowSection.TOP else bottom
        X.append(window.lower_tokens)
        y.append(labeled.label)
    model = WindowNaiveBayes(alpha=alpha, features=features, binarize=binarize,
                             backend_id=backend_id, max_tokens=window_tokens)
    return model.fit(X, y)
