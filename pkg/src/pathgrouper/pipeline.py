"""End-to-end decision pipeline: windows, member votes, routing, arbitration.

The ensemble is exposed as a fit/predict estimator so it composes with the
usual tooling; `decide` returns the full audit record per report.
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.exceptions import NotFittedError

from .arbiter import ArbiterVerdict, FallbackKind, fallback_verdict
from .backends.base import BackendUnavailableError
from .backends.lexicon import LexiconClassifier
from .backends.naive_bayes import WindowNaiveBayes
from .labels import TumorGroup, parse_tumor_group
from .reports import LabeledReport, PathologyReport, ReportSource
from .voting import (
    EnsembleConfig,
    HardGroupTest,
    Prediction,
    RouteReason,
    RoutingDecision,
    VoteTally,
    route,
    tally,
)
from .windows import WindowSection, windows

logger = logging.getLogger(__name__)


class DecisionPath(enum.Enum):
    ENSEMBLE_MAJORITY = "ensemble_majority"
    ARBITRATED_BELOW_THRESHOLD = "arbitrated_below_threshold"
    ARBITRATED_HARD_GROUP = "arbitrated_hard_group"
    ARBITRATED_TIE = "arbitrated_tie"
    FALLBACK = "fallback"


DEFAULT_HARD_GROUP_NAMES = ("Cervix", "MultipleMyeloma", "PrimaryUnknown", "Skin")


_PATH_FOR_REASON = {
    RouteReason.BELOW_THRESHOLD: DecisionPath.ARBITRATED_BELOW_THRESHOLD,
    RouteReason.HARD_GROUP: DecisionPath.ARBITRATED_HARD_GROUP,
    RouteReason.TIE: DecisionPath.ARBITRATED_TIE,
}


@dataclass(frozen=True)
class DecisionRecord:
    report_id: str
    final_group: TumorGroup
    path: DecisionPath
    tally: VoteTally
    candidates: tuple[TumorGroup, ...]
    verdict: ArbiterVerdict | None
    degraded: bool
    timings_ms: Mapping[str, float]

    def __post_init__(self):
        arbitrated = self.path is not DecisionPath.ENSEMBLE_MAJORITY
        if arbitrated != (self.verdict is not None):
            raise ValueError(f"path {self.path.value} inconsistent with verdict presence")
        if self.verdict is not None and self.verdict.tumor_group is not self.final_group:
            raise ValueError("final_group must equal the verdict's tumor group")


def record_to_obj(record: DecisionRecord, include_timings: bool = False) -> dict:
    """JSON-ready form; timings are opt-in so fixed-seed runs stay byte-stable."""
    verdict = None
    if record.verdict is not None:
        verdict = {
            "tumor_group": record.verdict.tumor_group.value,
            "reason": record.verdict.reason,
            "attempts": record.verdict.attempts,
            "fallback": record.verdict.fallback.value if record.verdict.fallback else None,
        }
    obj = {
        "report_id": record.report_id,
        "final_group": record.final_group.value,
        "path": record.path.value,
        "votes": {g.value: record.tally.counts[g]
                  for g in sorted(record.tally.counts, key=lambda g: g.canonical_index)},
        "members": [{"backend": p.backend_id, "section": p.section.value,
                     "group": p.group.value} for p in record.tally.per_member],
        "candidates": [g.value for g in record.candidates],
        "degraded": record.degraded,
        "verdict": verdict,
    }
    if include_timings:
        obj["timings_ms"] = {k: round(v, 3) for k, v in record.timings_ms.items()}
    return obj


Member = tuple[object, WindowSection]


def default_members(lexicon_source=None, window_tokens: int = 512) -> list[Member]:
    """Six slots: three backend families across top and bottom windows."""
    roster: list[Member] = []
    for section in (WindowSection.TOP, WindowSection.BOTTOM):
        roster.append((LexiconClassifier(source=lexicon_source, backend_id="lexicon",
                                         max_tokens=window_tokens), section))
    for section in (WindowSection.TOP, WindowSection.BOTTOM):
        roster.append((WindowNaiveBayes(alpha=1.0, features="unigram", backend_id="nb_a",
                                        max_tokens=window_tokens), section))
    for section in (WindowSection.TOP, WindowSection.BOTTOM):
        roster.append((WindowNaiveBayes(alpha=0.5, features="unigram_bigram", binarize=True,
                                        backend_id="nb_b", max_tokens=window_tokens), section))
    return roster


def _as_report(item: PathologyReport | LabeledReport | str, index: int) -> PathologyReport:
    if isinstance(item, LabeledReport):
        return item.report
    if isinstance(item, PathologyReport):
        return item
    return PathologyReport(report_id=f"r{index}", patient_id="", text=str(item),
                           source=ReportSource.JSONL)


def classify_report(report: PathologyReport, members: Sequence[Member],
                    config: EnsembleConfig, arbiter=None) -> DecisionRecord:
    """Run one report through the full decision procedure."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    top, bottom = windows(report, config.window_tokens)
    timings["windows"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    predictions: list[Prediction] = []
    degraded = False
    for backend, section in members:
        window = top if section is WindowSection.TOP else bottom
        try:
            predictions.append(backend.classify(window))
        except BackendUnavailableError as exc:
            degraded = True
            logger.warning("report %s: dropping vote: %s", report.report_id, exc)
    timings["classify"] = (time.perf_counter() - t0) * 1000
    if not predictions:
        raise BackendUnavailableError(f"report {report.report_id}: no member produced a vote")

    t0 = time.perf_counter()
    vote_tally = tally(predictions)
    decision: RoutingDecision = route(vote_tally, config)
    timings["route"] = (time.perf_counter() - t0) * 1000

    if decision.decided:
        return DecisionRecord(
            report_id=report.report_id, final_group=decision.group,
            path=DecisionPath.ENSEMBLE_MAJORITY, tally=vote_tally, candidates=(),
            verdict=None, degraded=degraded, timings_ms=timings)

    t0 = time.perf_counter()
    if arbiter is None:
        # arbitration disabled: the ensemble's plurality stands, flagged as such
        verdict = fallback_verdict(FallbackKind.PLURALITY_VOTE, decision.candidates,
                                    vote_tally, attempts=1, raw_response="")
    else:
        verdict = arbiter.arbitrate(report, decision.candidates, tally=vote_tally)
    timings["arbitrate"] = (time.perf_counter() - t0) * 1000

    path = DecisionPath.FALLBACK if verdict.fallback is not None \
        else _PATH_FOR_REASON[decision.reason]
    return DecisionRecord(
        report_id=report.report_id, final_group=verdict.tumor_group, path=path,
        tally=vote_tally, candidates=decision.candidates, verdict=verdict,
        degraded=degraded, timings_ms=timings)


@dataclass(frozen=True)
class BatchError:
    sequence: int
    report_id: str
    message: str


@dataclass
class RunSummary:
    n_input: int = 0
    n_decided: int = 0
    path_counts: dict[str, int] = field(
        default_factory=lambda: {p.value: 0 for p in DecisionPath})
    degraded: int = 0
    errors: list[BatchError] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def arbitrated(self) -> int:
        return sum(c for p, c in self.path_counts.items()
                   if p != DecisionPath.ENSEMBLE_MAJORITY.value)

    @property
    def arbitrated_fraction(self) -> float:
        return self.arbitrated / self.n_decided if self.n_decided else 0.0

    @property
    def throughput_rps(self) -> float:
        return self.n_decided / self.elapsed_s if self.elapsed_s > 0 else 0.0

    def to_obj(self, include_timing: bool = True) -> dict:
        obj = {
            "n_input": self.n_input,
            "n_decided": self.n_decided,
            "path_counts": dict(self.path_counts),
            "arbitrated": self.arbitrated,
            "arbitrated_fraction": self.arbitrated_fraction,
            "degraded": self.degraded,
            "errors": [{"sequence": e.sequence, "report_id": e.report_id,
                        "message": e.message} for e in self.errors],
        }
        if include_timing:
            obj["elapsed_s"] = round(self.elapsed_s, 3)
            obj["throughput_rps"] = round(self.throughput_rps, 3)
        return obj


def run_batch(reports: Iterable[PathologyReport | LabeledReport],
              members: Sequence[Member], config: EnsembleConfig, arbiter=None,
              workers: int = 1,
              ) -> tuple[list[DecisionRecord], RunSummary]:
    """Classify a batch; output order always matches input order.

    Per-report failures become summary error entries rather than aborting the
    batch.
    """
    summary = RunSummary()
    started = time.perf_counter()
    items = list(enumerate(reports))
    summary.n_input = len(items)

    def work(item: tuple[int, PathologyReport | LabeledReport]):
        seq, entry = item
        report = entry.report if isinstance(entry, LabeledReport) else entry
        try:
            return classify_report(report, members, config, arbiter)
        except Exception as exc:
            rid = getattr(report, "report_id", f"#{seq}")
            return BatchError(sequence=seq, report_id=rid, message=str(exc))

    if workers <= 1:
        results = [work(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, items))

    records: list[DecisionRecord] = []
    for seq, result in enumerate(results):
        if isinstance(result, BatchError):
            summary.errors.append(result)
            continue
        records.append(result)
        summary.n_decided += 1
        summary.path_counts[result.path.value] += 1
        if result.degraded:
            summary.degraded += 1
    summary.elapsed_s = time.perf_counter() - started
    return records, summary


class ArbitratedEnsembleClassifier(BaseEstimator, ClassifierMixin):
    """Ensemble of window classifiers with threshold-gated arbitration.

    fit trains every trainable member on its own window of the labeled
    corpus; predict runs the full decision procedure and returns canonical
    label strings. Use decide() for complete audit records.
    """

    def __init__(self, members: Sequence[Member] | None = None,
                 vote_threshold: int = 5,
                 hard_groups: Sequence[TumorGroup | str] = DEFAULT_HARD_GROUP_NAMES,
                 window_tokens: int = 512,
                 hard_group_test: str = "winner_only",
                 arbiter=None,
                 lexicon_source=None):
        self.members = members
        self.vote_threshold = vote_threshold
        self.hard_groups = hard_groups
        self.window_tokens = window_tokens
        self.hard_group_test = hard_group_test
        self.arbiter = arbiter
        self.lexicon_source = lexicon_source

    def _build_config(self, member_list: Sequence[Member]) -> EnsembleConfig:
        ids = tuple((getattr(b, "backend_id", type(b).__name__), s) for b, s in member_list)
        hard = frozenset(g if isinstance(g, TumorGroup) else TumorGroup(g)
                         for g in self.hard_groups)
        return EnsembleConfig(members=ids, vote_threshold=self.vote_threshold,
                              hard_groups=hard, window_tokens=self.window_tokens,
                              hard_group_test=HardGroupTest(self.hard_group_test))

    def fit(self, X: Sequence[PathologyReport | LabeledReport | str],
            y: Sequence[TumorGroup | str] | None = None) -> "ArbitratedEnsembleClassifier":
        if y is None:
            if not all(isinstance(item, LabeledReport) for item in X):
                raise ValueError("y is required unless X holds LabeledReport items")
            y = [item.label for item in X]
        if len(X) != len(y):
            raise ValueError("X and y length mismatch")
        labels = [g if isinstance(g, TumorGroup) else parse_tumor_group(str(g))
                  for g in y]

        roster = list(self.members) if self.members is not None \
            else default_members(self.lexicon_source, self.window_tokens)
        reports = [_as_report(item, i) for i, item in enumerate(X)]
        window_pairs = [windows(r, self.window_tokens) for r in reports]

        fitted: list[Member] = []
        for backend, section in roster:
            section = WindowSection(section) if isinstance(section, str) else section
            if isinstance(backend, BaseEstimator):
                backend = clone(backend)
            if hasattr(backend, "fit"):
                idx = 0 if section is WindowSection.TOP else 1
                Xw = [pair[idx].lower_tokens for pair in window_pairs]
                backend.fit(Xw, labels)
            fitted.append((backend, section))
        self.members_ = fitted
        self.config_ = self._build_config(fitted)
        self.config_.validate()
        self.classes_ = sorted({g.value for g in labels})
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "members_"):
            raise NotFittedError("ArbitratedEnsembleClassifier must be fit before use")

    def decide(self, X: Sequence[PathologyReport | LabeledReport | str],
               workers: int = 1) -> list[DecisionRecord]:
        self._check_fitted()
        reports = [_as_report(item, i) for i, item in enumerate(X)]
        records, summary = run_batch(reports, self.members_, self.config_,
                                     self.arbiter, workers=workers)
        if summary.errors:
            first = summary.errors[0]
            raise RuntimeError(f"{len(summary.errors)} report(s) failed; "
                               f"first: {first.report_id}: {first.message}")
        return records

    def predict(self, X: Sequence[PathologyReport | LabeledReport | str]) -> list[str]:
        return [record.final_group.value for record in self.decide(X)]
