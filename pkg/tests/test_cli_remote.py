"""CLI runs that exercise the HTTP surfaces: chat arbiter, remote members."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from pathgrouper import cli


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cliremote")
    spec_path = tmp / "genspec.json"
    spec_path.write_text(json.dumps({
        "scale": 0.01, "seed": 23, "ambiguity_rate": 0.3,
        "patient_noise_rate": 0.15, "window_tokens": 96}), encoding="utf-8")
    corpus = tmp / "corpus"
    assert cli.main(["generate", "--spec", str(spec_path),
                     "--output-dir", str(corpus)]) == 0
    base_config = tmp / "train_config.json"
    base_config.write_text(json.dumps({
        "ensemble": {"window_tokens": 96},
        "model_dir": str(tmp / "models"),
    }), encoding="utf-8")
    assert cli.main(["train", "--config", str(base_config),
                     "--input", str(corpus / "train.jsonl")]) == 0
    return tmp


class _ChatStub(BaseHTTPRequestHandler):
    calls: list = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        request = json.loads(self.rfile.read(length))
        type(self).calls.append(request)
        # echo back the first offered candidate
        system = request["messages"][0]["content"]
        first = next(line[2:] for line in system.splitlines()
                     if line.startswith("- "))
        content = json.dumps({"tumor_group": first, "reason": "stub choice"})
        body = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture()
def chat_stub():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ChatStub)
    _ChatStub.calls = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()
    server.server_close()


def test_chat_arbiter_via_env_override_with_transcript(trained, chat_stub,
                                                       tmp_path, monkeypatch):
    monkeypatch.setenv("ARBITER_ENDPOINT", chat_stub)
    transcript = tmp_path / "transcript.jsonl"
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "ensemble": {"window_tokens": 96},
        "model_dir": str(trained / "models"),
        "arbiter": {"mode": "chat", "model": "stub-model",
                    "transcript": str(transcript)},
    }), encoding="utf-8")
    out = tmp_path / "decisions.jsonl"
    code = cli.main(["classify", "--config", str(config),
                     "--input", str(trained / "corpus" / "test.jsonl"),
                     "--output", str(out)])
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    arbitrated = [r for r in records if r["path"].startswith("arbitrated")]
    assert arbitrated, "expected at least one escalation in the test batch"
    for record in arbitrated:
        # stub answers with the plurality candidate; verdict must respect it
        assert record["verdict"]["tumor_group"] == record["candidates"][0]
        assert record["verdict"]["fallback"] is None
    assert len(_ChatStub.calls) == len(arbitrated)
    assert _ChatStub.calls[0]["model"] == "stub-model"
    transcript_rows = [json.loads(line) for line in transcript.read_text().splitlines()]
    assert len(transcript_rows) == len(arbitrated)
    assert all(row["error"] is None for row in transcript_rows)


def test_unreachable_arbiter_falls_back_and_exits_zero(trained, tmp_path,
                                                       monkeypatch):
    monkeypatch.delenv("ARBITER_ENDPOINT", raising=False)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "ensemble": {"window_tokens": 96},
        "model_dir": str(trained / "models"),
        "arbiter": {"mode": "chat", "endpoint": "http://127.0.0.1:1/nope",
                    "max_attempts": 2, "fallback": "plurality_vote"},
    }), encoding="utf-8")
    out = tmp_path / "decisions.jsonl"
    code = cli.main(["classify", "--config", str(config),
                     "--input", str(trained / "corpus" / "test.jsonl"),
                     "--output", str(out)])
    assert code == 0  # fallbacks are warnings, not errors
    records = [json.loads(line) for line in out.read_text().splitlines()]
    fallbacks = [r for r in records if r["path"] == "fallback"]
    assert fallbacks, "escalated reports should resolve by plurality fallback"
    for record in fallbacks:
        assert record["verdict"]["fallback"] == "plurality_vote"
        assert record["verdict"]["attempts"] == 2


def test_degraded_remote_member_lowers_votes_not_the_batch(trained, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "ensemble": {
            "members": [["lexicon", "top"], ["lexicon", "bottom"],
                        ["nb_a", "top"], ["nb_a", "bottom"],
                        ["nb_b", "top"], ["nb_b", "bottom"],
                        ["offline", "top"], ["offline", "bottom"]],
            "vote_threshold": 5,
            "window_tokens": 96,
        },
        "backends": {
            "lexicon": {"type": "lexicon"},
            "nb_a": {"type": "naive_bayes", "alpha": 1.0, "features": "unigram"},
            "nb_b": {"type": "naive_bayes", "alpha": 0.5,
                     "features": "unigram_bigram", "binarize": True},
            "offline": {"type": "remote", "endpoint": "http://127.0.0.1:1/x",
                        "timeout": 0.2},
        },
        "model_dir": str(trained / "models"),
        "arbiter": {"mode": "rules"},
    }), encoding="utf-8")
    out = tmp_path / "decisions.jsonl"
    summary_path = tmp_path / "summary.json"
    code = cli.main(["classify", "--config", str(config),
                     "--input", str(trained / "corpus" / "test.jsonl"),
                     "--output", str(out), "--summary", str(summary_path)])
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert records and all(r["degraded"] for r in records)
    assert all(sum(r["votes"].values()) == 6 for r in records)
    summary = json.loads(summary_path.read_text())
    assert summary["degraded"] == len(records)
    assert summary["errors"] == []
