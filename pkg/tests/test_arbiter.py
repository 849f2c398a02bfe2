import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from pathgrouper.arbiter import (
    ArbiterPolicy,
    ArbiterUnreachableError,
    ArbiterVerdict,
    ChatArbiter,
    EmptyCandidatesError,
    FallbackKind,
    HttpChatCompletionClient,
    MissingFieldError,
    NotParseableError,
    OutOfCandidatesError,
    PromptTemplate,
    RuleArbiter,
    build_prompt,
    parse_verdict,
)
from pathgrouper.labels import TumorGroup
from pathgrouper.reports import PathologyReport, ReportSource
from pathgrouper.voting import VoteTally


def _report(text="SPECIMEN: skin, shave biopsy.\nDIAGNOSIS: basal cell carcinoma."):
    return PathologyReport(report_id="r1", patient_id="p1", text=text,
                           source=ReportSource.SYNTHETIC)


class TestPromptTemplate:
    def test_rendered_prompt_contains_required_guidance(self):
        template = PromptTemplate.load()
        prompt = template.render([TumorGroup.LEUKEMIA, TumorGroup.LYMPHOMA], "text")
        assert "if the disease presents in the bone marrow, then it is leukemia" in prompt
        assert "the tumor group should be melanoma, even if there is a mention of skin" in prompt
        assert "only with valid JSON" in prompt
        assert "'tumor_group' and 'reason'" in prompt

    def test_candidates_each_listed_exactly_once_and_report_last(self):
        template = PromptTemplate.load()
        candidates = [TumorGroup.MELANOMA, TumorGroup.SKIN]
        prompt = template.render(candidates, "REPORT BODY HERE")
        assert prompt.count("- melanoma") == 1
        assert prompt.count("- skin") == 1
        assert prompt.rstrip().endswith("REPORT BODY HERE")

    def test_injective_in_candidates(self):
        template = PromptTemplate.load()
        a = template.render([TumorGroup.MELANOMA, TumorGroup.SKIN], "body")
        b = template.render([TumorGroup.SKIN, TumorGroup.MELANOMA], "body")
        c = template.render([TumorGroup.MELANOMA], "body")
        assert len({a, b, c}) == 3

    def test_empty_candidates_rejected(self):
        with pytest.raises(EmptyCandidatesError):
            PromptTemplate.load().render([], "body")

    def test_messages_shape(self):
        template = PromptTemplate.load()
        messages = template.render_messages([TumorGroup.LUNG], "the report")
        assert [m["role"] for m in messages] == ["system", "user"]
        assert "- lung" in messages[0]["content"]
        assert messages[1]["content"].startswith("the report")
        corrective = template.render_messages([TumorGroup.LUNG], "the report",
                                              corrective=True)
        assert "previous response was not valid" in corrective[1]["content"]

    def test_template_must_declare_placeholders(self):
        with pytest.raises(ValueError):
            PromptTemplate(text="no placeholders at all")

    def test_build_prompt_deterministic(self):
        template = PromptTemplate.load()
        report = _report()
        assert build_prompt(template, [TumorGroup.SKIN], report) == \
            build_prompt(template, [TumorGroup.SKIN], report)


CANDIDATES = [TumorGroup.MELANOMA, TumorGroup.SKIN, TumorGroup.LUNG]


class TestParseVerdict:
    def test_plain_json(self):
        verdict = parse_verdict('{"tumor_group": "melanoma", "reason": "SSM on biopsy"}',
                                CANDIDATES)
        assert verdict.tumor_group is TumorGroup.MELANOMA
        assert verdict.reason == "SSM on biopsy"

    def test_code_fences_stripped(self):
        raw = '```json\n{"tumor_group":"lung","reason":"lobectomy, adenocarcinoma"}\n```'
        verdict = parse_verdict(raw, CANDIDATES)
        assert verdict.tumor_group is TumorGroup.LUNG

    def test_prose_wrapped_json(self):
        raw = 'Sure! Here is my answer: {"tumor_group": "skin", "reason": "BCC"} hope it helps'
        assert parse_verdict(raw, CANDIDATES).tumor_group is TumorGroup.SKIN

    def test_missing_reason(self):
        with pytest.raises(MissingFieldError) as exc_info:
            parse_verdict('{"tumor_group": "Lung"}', CANDIDATES)
        assert exc_info.value.name == "reason"

    def test_blank_reason_counts_as_missing(self):
        with pytest.raises(MissingFieldError):
            parse_verdict('{"tumor_group": "Lung", "reason": "  "}', CANDIDATES)

    def test_missing_tumor_group(self):
        with pytest.raises(MissingFieldError):
            parse_verdict('{"reason": "because"}', CANDIDATES)

    def test_out_of_candidates(self):
        with pytest.raises(OutOfCandidatesError):
            parse_verdict('{"tumor_group": "Thyroid", "reason": "x"}',
                          [TumorGroup.BREAST, TumorGroup.SKIN])

    def test_unknown_label_is_out_of_candidates(self):
        with pytest.raises(OutOfCandidatesError):
            parse_verdict('{"tumor_group": "Banana", "reason": "x"}', CANDIDATES)

    def test_not_parseable(self):
        with pytest.raises(NotParseableError):
            parse_verdict("no json here at all", CANDIDATES)
        with pytest.raises(NotParseableError):
            parse_verdict("[1, 2, 3]", CANDIDATES)

    def test_first_valid_object_wins(self):
        raw = '{broken {"tumor_group": "skin", "reason": "first valid"} {"tumor_group": "lung"}'
        assert parse_verdict(raw, CANDIDATES).tumor_group is TumorGroup.SKIN

    def test_alias_labels_accepted(self):
        verdict = parse_verdict('{"tumor_group": "MELANOMA", "reason": "x"}', CANDIDATES)
        assert verdict.tumor_group is TumorGroup.MELANOMA


class ScriptedClient:
    """Chat client returning canned responses; raises when scripted to."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0
        self.seen_messages = []

    def complete(self, messages, temperature, max_tokens):
        self.seen_messages.append(messages)
        index = min(self.calls, len(self.responses) - 1)
        self.calls += 1
        response = self.responses[index]
        if isinstance(response, Exception):
            raise response
        return response


def _arbiter(responses, **policy_kwargs):
    policy = ArbiterPolicy(endpoint="http://unused", **policy_kwargs)
    client = ScriptedClient(responses)
    return ChatArbiter(policy, client=client), client


class TestChatArbiter:
    def test_valid_first_attempt(self):
        arbiter, client = _arbiter(['{"tumor_group":"melanoma","reason":"SSM on skin biopsy"}'])
        verdict = arbiter.arbitrate(_report(), CANDIDATES)
        assert verdict.tumor_group is TumorGroup.MELANOMA
        assert verdict.attempts == 1
        assert verdict.fallback is None
        assert client.calls == 1

    def test_retry_after_prose_then_valid(self):
        arbiter, client = _arbiter([
            "I think this is melanoma.",
            '{"tumor_group":"melanoma","reason":"on retry"}'])
        verdict = arbiter.arbitrate(_report(), CANDIDATES)
        assert verdict.attempts == 2
        assert client.calls == 2
        # corrective instruction appended on the retry only
        assert "previous response was not valid" not in client.seen_messages[0][1]["content"]
        assert "previous response was not valid" in client.seen_messages[1][1]["content"]

    def test_fallback_plurality_vote(self):
        arbiter, client = _arbiter(['{"tumor_group":"Breast","reason":"x"}'],
                                   max_attempts=3)
        tally = VoteTally(counts={TumorGroup.SKIN: 3, TumorGroup.MELANOMA: 2,
                                  TumorGroup.LUNG: 1})
        verdict = arbiter.arbitrate(_report(), CANDIDATES, tally=tally)
        assert client.calls == 3
        assert verdict.fallback is FallbackKind.PLURALITY_VOTE
        assert verdict.tumor_group is TumorGroup.SKIN  # tally argmax
        assert verdict.attempts == 3

    def test_fallback_primary_unknown(self):
        arbiter, _ = _arbiter(["junk"], max_attempts=2,
                              fallback=FallbackKind.PRIMARY_UNKNOWN)
        verdict = arbiter.arbitrate(
            _report(), [TumorGroup.SKIN, TumorGroup.PRIMARY_UNKNOWN])
        assert verdict.tumor_group is TumorGroup.PRIMARY_UNKNOWN
        assert verdict.fallback is FallbackKind.PRIMARY_UNKNOWN

    def test_fallback_fail_raises(self):
        arbiter, _ = _arbiter(["junk"], max_attempts=2, fallback=FallbackKind.FAIL)
        with pytest.raises(ArbiterUnreachableError):
            arbiter.arbitrate(_report(), CANDIDATES)

    def test_unreachable_then_recovers(self):
        arbiter, client = _arbiter([
            ArbiterUnreachableError("connection refused"),
            '{"tumor_group":"skin","reason":"ok"}'])
        verdict = arbiter.arbitrate(_report(), CANDIDATES)
        assert verdict.attempts == 2

    def test_never_exceeds_max_attempts(self):
        arbiter, client = _arbiter(["junk"], max_attempts=4)
        arbiter.arbitrate(_report(), CANDIDATES,
                          tally=VoteTally(counts={TumorGroup.SKIN: 6}))
        assert client.calls == 4

    def test_empty_candidates(self):
        arbiter, _ = _arbiter(["x"])
        with pytest.raises(EmptyCandidatesError):
            arbiter.arbitrate(_report(), [])

    def test_transcript_records_every_call(self):
        calls = []
        policy = ArbiterPolicy(endpoint="http://unused", max_attempts=3)
        client = ScriptedClient(["junk", '{"tumor_group":"skin","reason":"ok"}'])
        arbiter = ChatArbiter(policy, client=client, transcript=calls.append)
        arbiter.arbitrate(_report(), CANDIDATES)
        assert len(calls) == 2
        assert calls[0].error is not None and calls[1].error is None
        assert calls[0].attempt == 1 and calls[1].attempt == 2

    def test_long_report_tail_preserved(self):
        policy = ArbiterPolicy(endpoint="http://unused", report_char_cap=100)
        client = ScriptedClient(['{"tumor_group":"skin","reason":"ok"}'])
        arbiter = ChatArbiter(policy, client=client)
        text = ("x" * 500) + " FINAL DIAGNOSIS: basal cell carcinoma"
        arbiter.arbitrate(_report(text), CANDIDATES)
        user = client.seen_messages[0][1]["content"]
        assert "basal cell carcinoma" in user
        assert len(user) < 200

    def test_deterministic_with_fixed_mock(self):
        responses = ['{"tumor_group":"melanoma","reason":"fixed"}']
        a1, _ = _arbiter(responses)
        a2, _ = _arbiter(responses)
        assert a1.arbitrate(_report(), CANDIDATES) == a2.arbitrate(_report(), CANDIDATES)


class TestRuleArbiter:
    def test_melanoma_over_skin(self):
        arbiter = RuleArbiter()
        report = _report("SPECIMEN: skin of back, excision.\n"
                         "DIAGNOSIS: malignant melanoma, breslow 2.1 mm.")
        verdict = arbiter.arbitrate(report, [TumorGroup.SKIN, TumorGroup.MELANOMA])
        assert verdict.tumor_group is TumorGroup.MELANOMA

    def test_bone_marrow_means_leukemia(self):
        arbiter = RuleArbiter()
        report = _report("SPECIMEN: bone marrow aspirate.\nBlasts comprise 40 percent.")
        verdict = arbiter.arbitrate(report, [TumorGroup.LEUKEMIA, TumorGroup.LYMPHOMA])
        assert verdict.tumor_group is TumorGroup.LEUKEMIA

    def test_lymph_node_means_lymphoma(self):
        arbiter = RuleArbiter()
        report = _report("SPECIMEN: axillary lymph node, excisional biopsy.\n"
                         "Effaced architecture.")
        verdict = arbiter.arbitrate(report, [TumorGroup.LYMPHOMA, TumorGroup.LEUKEMIA])
        assert verdict.tumor_group is TumorGroup.LYMPHOMA

    def test_plasma_cells_beat_bone_marrow_rule(self):
        arbiter = RuleArbiter()
        report = _report("SPECIMEN: bone marrow trephine.\n"
                         "Sheets of plasma cells exceeding 30 percent.")
        verdict = arbiter.arbitrate(
            report, [TumorGroup.LEUKEMIA, TumorGroup.MULTIPLE_MYELOMA])
        assert verdict.tumor_group is TumorGroup.MULTIPLE_MYELOMA

    def test_candidate_constraint_respected(self):
        # melanoma wording but melanoma not offered: falls through to scoring
        arbiter = RuleArbiter()
        report = _report("DIAGNOSIS: malignant melanoma of skin.")
        verdict = arbiter.arbitrate(report, [TumorGroup.SKIN, TumorGroup.BREAST])
        assert verdict.tumor_group is TumorGroup.SKIN

    def test_site_scoring_fallback(self):
        arbiter = RuleArbiter()
        report = _report("SPECIMEN: left breast, core needle biopsy.\n"
                         "DIAGNOSIS: invasive ductal carcinoma, grade 2.")
        verdict = arbiter.arbitrate(report, [TumorGroup.SKIN, TumorGroup.BREAST])
        assert verdict.tumor_group is TumorGroup.BREAST

    def test_no_signal_keeps_plurality(self):
        arbiter = RuleArbiter()
        report = _report("completely nondescript text")
        tally = VoteTally(counts={TumorGroup.PROSTATE: 2, TumorGroup.THYROID: 4})
        verdict = arbiter.arbitrate(
            report, [TumorGroup.THYROID, TumorGroup.PROSTATE], tally=tally)
        assert verdict.tumor_group is TumorGroup.THYROID

    def test_verdict_always_in_candidates(self):
        arbiter = RuleArbiter()
        report = _report("bone marrow with plasma cells and melanoma and lymph node")
        for candidates in ([TumorGroup.LUNG], [TumorGroup.BREAST, TumorGroup.CERVIX]):
            verdict = arbiter.arbitrate(report, candidates)
            assert verdict.tumor_group in candidates


class _ChatStubHandler(BaseHTTPRequestHandler):
    reply: dict = {}
    seen: list = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        type(self).seen.append(json.loads(self.rfile.read(length)))
        body = json.dumps(type(self).reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class TestHttpChatClient:
    @pytest.fixture()
    def chat_endpoint(self):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _ChatStubHandler)
        _ChatStubHandler.reply = {"choices": [{"message": {"content":
            '{"tumor_group":"melanoma","reason":"wire test"}'}}]}
        _ChatStubHandler.seen = []
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
        server.shutdown()
        server.server_close()

    def test_wire_contract_round_trip(self, chat_endpoint):
        policy = ArbiterPolicy(endpoint=chat_endpoint, model="test-model",
                               temperature=0.0, max_response_tokens=128)
        arbiter = ChatArbiter(policy)
        verdict = arbiter.arbitrate(_report(), CANDIDATES)
        assert verdict.tumor_group is TumorGroup.MELANOMA
        request = _ChatStubHandler.seen[0]
        assert request["model"] == "test-model"
        assert request["temperature"] == 0.0
        assert request["max_tokens"] == 128
        assert [m["role"] for m in request["messages"]] == ["system", "user"]

    def test_unreachable(self):
        client = HttpChatCompletionClient("http://127.0.0.1:1/x", timeout=0.2)
        with pytest.raises(ArbiterUnreachableError):
            client.complete([{"role": "user", "content": "hi"}], 0.0, 10)
