"""Arbitration: constrained prompting, verdict validation, retry and fallback.

Two arbiter implementations share one surface: ChatArbiter speaks the generic
chat-completion wire contract to any HTTP endpoint, and RuleArbiter applies
the prompt's domain-guidance rules locally so the pipeline can run
deterministically without a hosted model.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .backends.lexicon import LexiconClassifier
from .labels import TumorGroup, UnknownLabelError, parse_tumor_group
from .reports import PathologyReport
from .voting import VoteTally
from .windows import tokenize

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE_RESOURCE = "prompt_template.txt"
CANDIDATES_SLOT = "{{candidates}}"
REPORT_SLOT = "{{report}}"

CORRECTIVE_INSTRUCTION = (
    "Your previous response was not valid. Respond only with valid JSON "
    "containing exactly the fields tumor_group and reason, with tumor_group "
    "chosen from the provided list."
)


class EmptyCandidatesError(ValueError):
    pass


class ArbiterUnreachableError(RuntimeError):
    pass


class VerdictError(ValueError):
    """Base for verdict validation failures; these trigger a retry."""


class NotParseableError(VerdictError):
    pass


class MissingFieldError(VerdictError):
    def __init__(self, name: str):
        super().__init__(f"verdict is missing field {name!r}")
        self.name = name


class OutOfCandidatesError(VerdictError):
    def __init__(self, label: str):
        super().__init__(f"verdict label {label!r} is not among the offered candidates")
        self.label = label


class FallbackKind(enum.Enum):
    PLURALITY_VOTE = "plurality_vote"
    PRIMARY_UNKNOWN = "primary_unknown"
    FAIL = "fail"


@dataclass(frozen=True)
class ArbiterPolicy:
    endpoint: str = ""
    model: str = "default"
    temperature: float = 0.0
    max_response_tokens: int = 256
    max_attempts: int = 3
    fallback: FallbackKind = FallbackKind.PLURALITY_VOTE
    timeout: float = 30.0
    # reports beyond this many characters keep their tail, where the
    # diagnosis usually lives
    report_char_cap: int = 12000
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class ArbiterVerdict:
    tumor_group: TumorGroup
    reason: str
    raw_response: str
    attempts: int
    fallback: FallbackKind | None = None

    def __post_init__(self):
        if not self.reason.strip():
            raise ValueError("verdict reason must be non-empty")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


@dataclass(frozen=True)
class PromptTemplate:
    text: str

    def __post_init__(self):
        for slot in (CANDIDATES_SLOT, REPORT_SLOT):
            if slot not in self.text:
                raise ValueError(f"prompt template is missing the {slot} placeholder")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PromptTemplate":
        if path is None:
            text = resources.files("pathgrouper.data").joinpath(
                DEFAULT_TEMPLATE_RESOURCE).read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls(text=text)

    def render(self, candidates: Sequence[TumorGroup], report_text: str) -> str:
        if not candidates:
            raise EmptyCandidatesError("candidate set is empty")
        listing = "\n".join(f"- {g.display_name}" for g in candidates)
        return (self.text
                .replace(CANDIDATES_SLOT, listing)
                .replace(REPORT_SLOT, report_text))

    def render_messages(self, candidates: Sequence[TumorGroup], report_text: str,
                        corrective: bool = False) -> list[dict[str, str]]:
        """Single-turn chat shape: system = guidance + candidates, user = report."""
        if not candidates:
            raise EmptyCandidatesError("candidate set is empty")
        listing = "\n".join(f"- {g.display_name}" for g in candidates)
        head, _, tail = self.text.partition(REPORT_SLOT)
        system = head.replace(CANDIDATES_SLOT, listing).strip()
        user = (report_text + tail).strip()
        if corrective:
            user = user + "\n\n" + CORRECTIVE_INSTRUCTION
        return [{"role": "system", "content": system},
                {"role": "user", "content": user}]


def build_prompt(template: PromptTemplate, candidates: Sequence[TumorGroup],
                 report: PathologyReport) -> str:
    """Deterministic full prompt text: guidance, candidate list, report last."""
    if not report.text.strip():
        raise ValueError("report text is empty")
    return template.render(candidates, report.text)


_JSON_DECODER = json.JSONDecoder()


def _first_json_object(raw: str) -> dict:
    """First syntactically valid JSON object anywhere in the text.

    Models often wrap output in code fences or prose; scanning from each
    opening brace handles both without caring about the wrapper.
    """
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = _JSON_DECODER.raw_decode(raw, idx)
        except ValueError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise NotParseableError("no JSON object found in response")


def parse_verdict(raw: str, candidates: Sequence[TumorGroup]) -> ArbiterVerdict:
    """Validate a raw model response against the offered candidate set."""
    obj = _first_json_object(raw)
    if "tumor_group" not in obj:
        raise MissingFieldError("tumor_group")
    reason = obj.get("reason")
    if reason is None or not str(reason).strip():
        raise MissingFieldError("reason")
    label = str(obj["tumor_group"])
    try:
        group = parse_tumor_group(label)
    except UnknownLabelError:
        raise OutOfCandidatesError(label) from None
    if group not in candidates:
        raise OutOfCandidatesError(label)
    return ArbiterVerdict(tumor_group=group, reason=str(reason).strip(),
                          raw_response=raw, attempts=1)


class ChatCompletionClient(Protocol):
    def complete(self, messages: list[dict[str, str]], temperature: float,
                 max_tokens: int) -> str: ...


class HttpChatCompletionClient:
    """Minimal chat-completion wire client.

    Request: {"model", "messages", "temperature", "max_tokens"}.
    Response: {"choices": [{"message": {"content": ...}}]}.
    """

    def __init__(self, endpoint: str, model: str = "default", timeout: float = 30.0,
                 session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, messages: list[dict[str, str]], temperature: float,
                 max_tokens: int) -> str:
        body = {"model": self.model, "messages": messages,
                "temperature": temperature, "max_tokens": max_tokens}
        try:
            resp = self._session.post(self.endpoint, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ArbiterUnreachableError(f"chat endpoint unreachable: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise ArbiterUnreachableError(f"chat endpoint returned HTTP {resp.status_code}")
        try:
            return str(resp.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise NotParseableError("chat response body has no message content") from exc


@dataclass(frozen=True)
class ArbitrationCall:
    """One request/response pair, for the replayable audit transcript."""
    report_id: str
    attempt: int
    request: list[dict[str, str]]
    response: str | None
    error: str | None = None


TranscriptSink = Callable[[ArbitrationCall], None]


class TranscriptWriter:
    """Appends one JSON line per arbiter call; safe for concurrent writers."""

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._lock = threading.Lock()

    def __call__(self, call: ArbitrationCall) -> None:
        line = json.dumps({
            "report_id": call.report_id,
            "attempt": call.attempt,
            "request": call.request,
            "response": call.response,
            "error": call.error,
        }, ensure_ascii=False)
        with self._lock:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def _tail_truncate(text: str, cap: int) -> str:
    return text if len(text) <= cap else text[-cap:]


def fallback_verdict(kind: FallbackKind, candidates: Sequence[TumorGroup],
                     tally: VoteTally | None, attempts: int,
                     raw_response: str) -> ArbiterVerdict:
    if kind is FallbackKind.PRIMARY_UNKNOWN:
        group = TumorGroup.PRIMARY_UNKNOWN
        why = "fallback: no valid arbiter verdict; defaulted to primary unknown"
    else:
        if tally is not None:
            group = tally.plurality()
        else:
            group = candidates[0]
        why = "fallback: no valid arbiter verdict; kept the ensemble plurality vote"
    return ArbiterVerdict(tumor_group=group, reason=why, raw_response=raw_response,
                          attempts=max(attempts, 1), fallback=kind)


class ChatArbiter:
    """Calls a chat-completion endpoint and enforces the candidate constraint."""

    def __init__(self, policy: ArbiterPolicy, template: PromptTemplate | None = None,
                 client: ChatCompletionClient | None = None,
                 transcript: TranscriptSink | None = None):
        self.policy = policy
        self.template = template or PromptTemplate.load()
        self.client = client or HttpChatCompletionClient(
            policy.endpoint, model=policy.model, timeout=policy.timeout)
        self.transcript = transcript
        self._in_flight = threading.Semaphore(policy.max_in_flight)

    def arbitrate(self, report: PathologyReport, candidates: Sequence[TumorGroup],
                  tally: VoteTally | None = None) -> ArbiterVerdict:
        if not candidates:
            raise EmptyCandidatesError("cannot arbitrate with no candidates")
        policy = self.policy
        report_text = _tail_truncate(report.text, policy.report_char_cap)
        last_raw = ""
        last_error: Exception | None = None
        for attempt in range(1, policy.max_attempts + 1):
            messages = self.template.render_messages(
                candidates, report_text, corrective=attempt > 1)
            try:
                with self._in_flight:
                    raw = self.client.complete(messages, policy.temperature,
                                               policy.max_response_tokens)
            except ArbiterUnreachableError as exc:
                last_error = exc
                self._record(report, attempt, messages, None, str(exc))
                continue
            last_raw = raw
            try:
                verdict = parse_verdict(raw, candidates)
            except VerdictError as exc:
                last_error = exc
                self._record(report, attempt, messages, raw, str(exc))
                continue
            self._record(report, attempt, messages, raw, None)
            return replace(verdict, attempts=attempt)

        if policy.fallback is FallbackKind.FAIL:
            if isinstance(last_error, ArbiterUnreachableError):
                raise last_error
            raise ArbiterUnreachableError(
                f"no valid verdict after {policy.max_attempts} attempts: {last_error}")
        logger.warning("arbiter fallback (%s) for report %s after %d attempts: %s",
                       policy.fallback.value, report.report_id, policy.max_attempts,
                       last_error)
        return fallback_verdict(policy.fallback, candidates, tally,
                                policy.max_attempts, last_raw)

    def _record(self, report: PathologyReport, attempt: int,
                messages: list[dict[str, str]], response: str | None,
                error: str | None) -> None:
        if self.transcript is not None:
            self.transcript(ArbitrationCall(report.report_id, attempt, messages,
                                            response, error))


class RuleArbiter:
    """Deterministic local arbiter applying the prompt's domain guidance.

    Decision order: plasma-cell wording beats the bone-marrow rule, melanoma
    beats skin, bone marrow means leukemia and lymph nodes mean lymphoma,
    cervical wording means cervix; otherwise the candidate with the highest
    lexicon match weight wins, and with no matches the plurality stands.
    """

    def __init__(self, lexicon=None, template: PromptTemplate | None = None):
        self.template = template or PromptTemplate.load()
        self._scorer = lexicon if lexicon is not None else LexiconClassifier().fit()

    def arbitrate(self, report: PathologyReport, candidates: Sequence[TumorGroup],
                  tally: VoteTally | None = None) -> ArbiterVerdict:
        if not candidates:
            raise EmptyCandidatesError("cannot arbitrate with no candidates")
        group, reason = self._decide(report.text, list(candidates), tally)
        raw = json.dumps({"tumor_group": group.display_name, "reason": reason})
        return ArbiterVerdict(tumor_group=group, reason=reason, raw_response=raw,
                              attempts=1)

    _NEGATED_MELANOMA = ("no evidence of melanoma", "negative for melanoma",
                         "no melanoma")

    def _decide(self, text: str, candidates: list[TumorGroup],
                tally: VoteTally | None) -> tuple[TumorGroup, str]:
        lower = text.casefold()
        for negated in self._NEGATED_MELANOMA:
            lower = lower.replace(negated, "")
        # site-anchored rules read the diagnosis section only, so an incidental
        # site mention elsewhere in the report cannot hijack them
        marker = lower.rfind("diagnosis")
        tail = lower[marker:] if marker != -1 else lower[-300:]

        def has(*phrases: str) -> bool:
            return any(p in lower for p in phrases)

        def tail_has(*phrases: str) -> bool:
            return any(p in tail for p in phrases)

        if TumorGroup.MULTIPLE_MYELOMA in candidates and has("plasma cell", "myeloma"):
            return TumorGroup.MULTIPLE_MYELOMA, "plasma cell neoplasm wording in the report"
        if TumorGroup.MELANOMA in candidates and has("melanoma"):
            return TumorGroup.MELANOMA, "report mentions melanoma, which takes precedence over skin"
        if TumorGroup.LEUKEMIA in candidates and tail_has("bone marrow"):
            return TumorGroup.LEUKEMIA, "disease presents in the bone marrow"
        if TumorGroup.LYMPHOMA in candidates and tail_has("lymph node"):
            return TumorGroup.LYMPHOMA, "disease presents in the lymph nodes"
        if TumorGroup.CERVIX in candidates and tail_has("cervix", "cervical"):
            return TumorGroup.CERVIX, "cervical cancer is coded as the cervix tumor group"

        lower_tokens = tuple(t.casefold() for t in tokenize(text))
        scores = self._scorer.match_scores(lower_tokens, restrict_to=candidates)
        if scores:
            best = max(scores.values())
            group = min((g for g, s in scores.items() if s == best),
                        key=candidates.index)
            return group, "strongest site and histology term match among the candidates"
        if tally is not None:
            voted = [g for g in candidates if tally.counts.get(g, 0) > 0]
            if voted:
                return voted[0], "no decisive wording; kept the ensemble plurality vote"
        return candidates[0], "no decisive wording; kept the first candidate"
