"""HTTP adapter so externally hosted classifiers can fill ensemble slots.

Wire contract: POST {"report_id", "section", "text"} to the endpoint; a 2xx
response carries {"label": <tumor group>, "scores": {label: prob, ...}?}.
"""

from __future__ import annotations

import threading

import requests

from ..labels import UnknownLabelError, parse_tumor_group
from ..voting import Prediction
from ..windows import TokenWindow
from .base import BackendUnavailableError, TruncationCounter, argmax_group


class InvalidRemoteLabelError(ValueError):
    pass


class RemoteBackend:
    def __init__(self, endpoint: str, backend_id: str, timeout: float = 10.0,
                 max_tokens: int = 512, max_in_flight: int = 4,
                 session: requests.Session | None = None):
        self.endpoint = endpoint
        self.backend_id = backend_id
        self.timeout = timeout
        self.max_tokens = max_tokens
        self.returns_scores = False
        self.truncations = TruncationCounter()
        self._session = session or requests.Session()
        self._in_flight = threading.Semaphore(max_in_flight)

    def classify(self, window: TokenWindow) -> Prediction:
        if len(window.tokens) > self.max_tokens:
            self.truncations.bump()
            window = window.truncated(self.max_tokens)
        body = {
            "report_id": window.origin_report_id,
            "section": window.section.value,
            "text": " ".join(window.tokens),
        }
        with self._in_flight:
            try:
                resp = self._session.post(self.endpoint, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                raise BackendUnavailableError(
                    f"{self.backend_id}: endpoint unreachable: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise BackendUnavailableError(
                f"{self.backend_id}: endpoint returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
            label = payload["label"]
        except (ValueError, KeyError, TypeError) as exc:
            raise InvalidRemoteLabelError(
                f"{self.backend_id}: response missing a label") from exc
        try:
            group = parse_tumor_group(str(label))
        except UnknownLabelError as exc:
            raise InvalidRemoteLabelError(
                f"{self.backend_id}: label {label!r} is outside the vocabulary") from exc

        scores = None
        raw_scores = payload.get("scores")
        if isinstance(raw_scores, dict) and raw_scores:
            try:
                scores = {parse_tumor_group(k): float(v) for k, v in raw_scores.items()}
            except (UnknownLabelError, ValueError) as exc:
                raise InvalidRemoteLabelError(
                    f"{self.backend_id}: scores map is invalid") from exc
            total = sum(scores.values())
            if any(v < 0 for v in scores.values()) or abs(total - 1.0) > 1e-9:
                raise InvalidRemoteLabelError(
                    f"{self.backend_id}: scores are not a distribution (sum={total})")
            if argmax_group(scores) is not group:
                raise InvalidRemoteLabelError(
                    f"{self.backend_id}: label disagrees with score argmax")
        return Prediction(group=group, backend_id=self.backend_id,
                          section=window.section, scores=scores)
