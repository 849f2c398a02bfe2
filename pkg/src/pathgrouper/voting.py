"""Vote tallying and routing: decide locally or escalate to the arbiter.

A report is decided by the ensemble alone only when a unique group reaches the
vote threshold and is not flagged hard-to-classify; everything else is routed
to arbitration with a candidate set built from the predicted groups plus the
configured hard groups.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .labels import TumorGroup
from .windows import WindowSection

logger = logging.getLogger(__name__)


class EmptyPredictionsError(ValueError):
    pass


class HardGroupTest(enum.Enum):
    # apply the hard-group check to the would-be winner only
    WINNER_ONLY = "winner_only"
    # additionally escalate whenever any predicted group is hard-to-classify
    ANY_PREDICTION = "any_prediction"


DEFAULT_HARD_GROUPS = frozenset({
    TumorGroup.SKIN,
    TumorGroup.CERVIX,
    TumorGroup.MULTIPLE_MYELOMA,
    TumorGroup.PRIMARY_UNKNOWN,
})


@dataclass(frozen=True)
class Prediction:
    group: TumorGroup
    backend_id: str
    section: WindowSection
    scores: Mapping[TumorGroup, float] | None = None

    def __post_init__(self):
        if self.scores is not None:
            top = min((g for g in self.scores
                       if self.scores[g] == max(self.scores.values())),
                      key=lambda g: g.canonical_index)
            if top is not self.group:
                raise ValueError(
                    f"prediction group {self.group} disagrees with score argmax {top}")


@dataclass(frozen=True)
class EnsembleConfig:
    members: tuple[tuple[str, WindowSection], ...]
    vote_threshold: int = 5
    hard_groups: frozenset[TumorGroup] = DEFAULT_HARD_GROUPS
    window_tokens: int = 512
    hard_group_test: HardGroupTest = HardGroupTest.WINNER_ONLY

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if not 1 <= self.vote_threshold <= len(self.members):
            raise ValueError(
                f"vote_threshold must be in [1, {len(self.members)}], got {self.vote_threshold}")
        if self.window_tokens < 1:
            raise ValueError("window_tokens must be positive")

    def validate(self) -> list[str]:
        """Non-fatal checks; returns warnings so experiments stay possible."""
        warnings: list[str] = []
        n = len(self.members)
        tops = sum(1 for _, section in self.members if section is WindowSection.TOP)
        if n % 2 == 0 and tops != n // 2:
            warnings.append(
                f"expected half of {n} members on each section, got {tops} top / {n - tops} bottom")
        if self.vote_threshold <= n // 2:
            warnings.append(
                f"vote_threshold {self.vote_threshold} <= half of {n} members; ties are possible")
        for w in warnings:
            logger.warning("ensemble config: %s", w)
        return warnings


@dataclass(frozen=True)
class VoteTally:
    counts: Mapping[TumorGroup, int]
    per_member: tuple[Prediction, ...] = ()

    @property
    def total_votes(self) -> int:
        return sum(self.counts.values())

    @property
    def distinct_predictions(self) -> frozenset[TumorGroup]:
        return frozenset(g for g, c in self.counts.items() if c > 0)

    def plurality(self) -> TumorGroup:
        """Highest-count group, canonical order breaking ties."""
        best = max(self.counts.values())
        return min((g for g, c in self.counts.items() if c == best),
                   key=lambda g: g.canonical_index)


def tally(predictions: Sequence[Prediction]) -> VoteTally:
    if not predictions:
        raise EmptyPredictionsError("cannot tally zero predictions")
    counts: dict[TumorGroup, int] = {}
    for p in predictions:
        counts[p.group] = counts.get(p.group, 0) + 1
    return VoteTally(counts=counts, per_member=tuple(predictions))


class RouteReason(enum.Enum):
    UNANIMOUS_OR_MAJORITY = "unanimous_or_majority"
    BELOW_THRESHOLD = "below_threshold"
    HARD_GROUP = "hard_group"
    TIE = "tie"


@dataclass(frozen=True)
class RoutingDecision:
    reason: RouteReason
    group: TumorGroup | None = None
    candidates: tuple[TumorGroup, ...] = ()

    @property
    def decided(self) -> bool:
        return self.group is not None


def arbitration_candidates(tally: VoteTally,
                           hard_groups: frozenset[TumorGroup]) -> tuple[TumorGroup, ...]:
    """Predicted groups by descending vote then canonical order, then the
    remaining hard groups in canonical order."""
    voted = sorted(tally.distinct_predictions,
                   key=lambda g: (-tally.counts[g], g.canonical_index))
    extra = sorted(hard_groups - set(voted), key=lambda g: g.canonical_index)
    return tuple(voted + extra)


def route(tally: VoteTally, config: EnsembleConfig) -> RoutingDecision:
    """Apply the threshold and hard-group tests to one tally.

    When members are missing (degraded report), the threshold is capped at the
    number of votes actually cast so the pipeline stays total.
    """
    if tally.total_votes < 1:
        raise EmptyPredictionsError("tally has no votes")
    threshold = min(config.vote_threshold, tally.total_votes)
    max_count = max(tally.counts.values())
    candidates = arbitration_candidates(tally, config.hard_groups)

    if max_count < threshold:
        return RoutingDecision(RouteReason.BELOW_THRESHOLD, candidates=candidates)

    winners = [g for g, c in tally.counts.items() if c == max_count]
    if len(winners) > 1:
        return RoutingDecision(RouteReason.TIE, candidates=candidates)

    winner = winners[0]
    if winner in config.hard_groups:
        return RoutingDecision(RouteReason.HARD_GROUP, candidates=candidates)
    if (config.hard_group_test is HardGroupTest.ANY_PREDICTION
            and tally.distinct_predictions & config.hard_groups):
        return RoutingDecision(RouteReason.HARD_GROUP, candidates=candidates)

    return RoutingDecision(RouteReason.UNANIMOUS_OR_MAJORITY, group=winner)
