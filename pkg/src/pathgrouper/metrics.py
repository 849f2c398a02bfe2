"""Per-group and support-weighted precision/recall/F1 over the closed vocabulary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .labels import CANONICAL_ORDER, TumorGroup


class EmptyInputError(ValueError):
    pass


class MismatchedTestSetsError(ValueError):
    pass


@dataclass(frozen=True)
class GroupScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    per_group: Mapping[TumorGroup, GroupScores]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    # full vocabulary confusion matrix, rows = gold, columns = predicted
    confusion: Mapping[TumorGroup, Mapping[TumorGroup, int]]
    n: int
    arbitration_stats: Mapping[str, float] = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "n": self.n,
            "weighted": {"precision": self.weighted_precision,
                         "recall": self.weighted_recall, "f1": self.weighted_f1},
            "per_group": {g.value: {"precision": s.precision, "recall": s.recall,
                                    "f1": s.f1, "support": s.support}
                          for g, s in self.per_group.items()},
            "arbitration_stats": dict(self.arbitration_stats),
        }


def _safe_div(a: float, b: float) -> float:
    # zero-denominator convention: 0, matching registry practice for groups
    # with tiny or no test support
    return a / b if b else 0.0


def score(pairs: Sequence[tuple[TumorGroup, TumorGroup]],
          arbitration_stats: Mapping[str, float] | None = None) -> EvalReport:
    """Score (gold, predicted) pairs; weights are proportional to gold support."""
    if not pairs:
        raise EmptyInputError("no (gold, predicted) pairs to score")
    confusion: dict[TumorGroup, dict[TumorGroup, int]] = {
        g: {p: 0 for p in CANONICAL_ORDER} for g in CANONICAL_ORDER}
    for gold, pred in pairs:
        confusion[gold][pred] += 1

    per_group: dict[TumorGroup, GroupScores] = {}
    weighted_p = weighted_r = weighted_f = 0.0
    total_support = 0
    for g in CANONICAL_ORDER:
        tp = confusion[g][g]
        support = sum(confusion[g].values())
        predicted = sum(confusion[gold][g] for gold in CANONICAL_ORDER)
        precision = _safe_div(tp, predicted)
        recall = _safe_div(tp, support)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_group[g] = GroupScores(precision, recall, f1, support)
        weighted_p += support * precision
        weighted_r += support * recall
        weighted_f += support * f1
        total_support += support

    return EvalReport(
        per_group=per_group,
        weighted_precision=weighted_p / total_support,
        weighted_recall=weighted_r / total_support,
        weighted_f1=weighted_f / total_support,
        confusion=confusion,
        n=len(pairs),
        arbitration_stats=dict(arbitration_stats or {}),
    )


PredictionRow = tuple[str, TumorGroup, TumorGroup]  # (report_id, gold, predicted)


@dataclass(frozen=True)
class ComparisonTable:
    """One column per run: weighted metrics plus per-group F1, tables-style."""

    run_names: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def to_text(self) -> str:
        name_width = max(len("Metric"), *(len(r[0]) for r in self.rows))
        col_width = max(12, *(len(n) for n in self.run_names)) + 2
        header = "Metric".ljust(name_width) + "".join(
            n.rjust(col_width) for n in self.run_names)
        lines = [header, "-" * len(header)]
        for name, values in self.rows:
            lines.append(name.ljust(name_width)
                         + "".join(f"{v:.4f}".rjust(col_width) for v in values))
        return "\n".join(lines)

    def to_obj(self) -> dict:
        return {"runs": list(self.run_names),
                "rows": [{"metric": name, "values": list(values)}
                         for name, values in self.rows]}


def compare_runs(runs: Sequence[tuple[str, Sequence[PredictionRow]]]) -> ComparisonTable:
    """Compare runs scored on the identical test set."""
    if not runs:
        raise EmptyInputError("no runs to compare")
    reference = sorted((rid, gold) for rid, gold, _ in runs[0][1])
    for name, rows in runs[1:]:
        if sorted((rid, gold) for rid, gold, _ in rows) != reference:
            raise MismatchedTestSetsError(
                f"run {name!r} was not scored on the same test set as {runs[0][0]!r}")

    reports = [score([(gold, pred) for _, gold, pred in rows]) for _, rows in runs]
    table_rows: list[tuple[str, tuple[float, ...]]] = [
        ("Precision (weighted)", tuple(r.weighted_precision for r in reports)),
        ("Recall (weighted)", tuple(r.weighted_recall for r in reports)),
        ("F1 (weighted)", tuple(r.weighted_f1 for r in reports)),
    ]
    for g in CANONICAL_ORDER:
        if any(r.per_group[g].support for r in reports):
            table_rows.append((f"F1 {g.value}", tuple(r.per_group[g].f1 for r in reports)))
    return ComparisonTable(run_names=tuple(name for name, _ in runs),
                           rows=tuple(table_rows))
