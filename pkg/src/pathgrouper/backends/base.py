"""Backend surface shared by all six ensemble slots."""

from __future__ import annotations

import threading
from typing import Mapping, Protocol, runtime_checkable

from ..labels import TumorGroup
from ..voting import Prediction
from ..windows import TokenWindow


class BackendUnavailableError(RuntimeError):
    """A (remote) member could not vote; the pipeline drops its vote."""


@runtime_checkable
class ClassifierBackend(Protocol):
    backend_id: str
    max_tokens: int
    returns_scores: bool

    def classify(self, window: TokenWindow) -> Prediction: ...


def argmax_group(scores: Mapping[TumorGroup, float]) -> TumorGroup:
    """Highest score wins; ties go to the lowest canonical index."""
    best = max(scores.values())
    return min((g for g, s in scores.items() if s == best),
               key=lambda g: g.canonical_index)


class TruncationCounter:
    """Counts windows cut down to a backend's token limit."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def bump(self) -> None:
        with self._lock:
            self._count += 1

    @property
    def count(self) -> int:
        with self._lock:
            return self._count
