"""One-report-per-request HTTP service with health and metrics endpoints.

Every decision is appended to the audit log before the response is sent, so
an interrupted service never acknowledges work it has not persisted.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .pipeline import DecisionPath, classify_report, record_to_obj
from .reports import PathologyReport, ReportSource

logger = logging.getLogger(__name__)


class ServiceMetrics:
    def __init__(self):
        self._lock = threading.Lock()
        self._path_counts = {p.value: 0 for p in DecisionPath}
        self._latencies_ms: list[float] = []
        self._errors = 0
        self._degraded = 0

    def record(self, path: DecisionPath, latency_ms: float, degraded: bool) -> None:
        with self._lock:
            self._path_counts[path.value] += 1
            self._latencies_ms.append(latency_ms)
            if degraded:
                self._degraded += 1

    def record_error(self) -> None:
        with self._lock:
            self._errors += 1

    def snapshot(self) -> dict:
        with self._lock:
            latencies = sorted(self._latencies_ms)
            n = sum(self._path_counts.values())

            def pct(q: float) -> float:
                if not latencies:
                    return 0.0
                idx = min(len(latencies) - 1, int(q * len(latencies)))
                return round(latencies[idx], 3)

            return {
                "n": n,
                "path_counts": dict(self._path_counts),
                "errors": self._errors,
                "degraded": self._degraded,
                "latency_ms": {"p50": pct(0.50), "p90": pct(0.90), "p99": pct(0.99)},
            }


class AuditLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, obj: dict) -> None:
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


class PipelineService:
    """Wraps a ThreadingHTTPServer; stop() drains in-flight requests."""

    def __init__(self, members, config, arbiter=None, host: str = "127.0.0.1",
                 port: int = 8080, audit_log: str | Path | None = None,
                 include_timings: bool = True):
        self.members = members
        self.config = config
        self.arbiter = arbiter
        self.metrics = ServiceMetrics()
        self.audit = AuditLog(audit_log) if audit_log else None
        self.include_timings = include_timings
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer((host, port), handler)
        # finish in-flight handlers before close returns
        self._server.daemon_threads = False
        self._server.block_on_close = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="pathgrouper-service", daemon=True)
        self._thread.start()
        logger.info("service listening on port %d", self.port)

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    # -- request handling --------------------------------------------------

    def handle_classify(self, payload: dict) -> tuple[int, dict]:
        try:
            report = PathologyReport(
                report_id=str(payload["report_id"]),
                patient_id=str(payload.get("patient_id", "")),
                text=str(payload["text"]),
                source=ReportSource.JSONL)
        except (KeyError, ValueError) as exc:
            self.metrics.record_error()
            return 400, {"error": f"invalid report: {exc}"}
        started = time.perf_counter()
        try:
            record = classify_report(report, self.members, self.config, self.arbiter)
        except Exception as exc:
            self.metrics.record_error()
            logger.exception("classify failed for report %s", report.report_id)
            return 500, {"error": str(exc)}
        latency_ms = (time.perf_counter() - started) * 1000
        obj = record_to_obj(record, include_timings=self.include_timings)
        if self.audit is not None:
            self.audit.append(obj)
        self.metrics.record(record.path, latency_ms, record.degraded)
        return 200, obj


def _make_handler(service: PipelineService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            logger.debug("http: " + fmt, *args)

        def _send(self, status: int, obj: dict) -> None:
            body = json.dumps(obj, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            # one request per connection, so handler threads exit promptly and
            # stop() can join them instead of waiting out keep-alive timeouts
            self.send_header("Connection", "close")
            self.end_headers()
            self.wfile.write(body)
            self.close_connection = True

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"status": "ok"})
            elif self.path == "/metrics":
                self._send(200, service.metrics.snapshot())
            else:
                self._send(404, {"error": f"no such endpoint: {self.path}"})

        def do_POST(self):
            if self.path != "/classify":
                self._send(404, {"error": f"no such endpoint: {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(payload, dict):
                    raise ValueError("request body must be a JSON object")
            except (ValueError, KeyError) as exc:
                service.metrics.record_error()
                self._send(400, {"error": f"bad request: {exc}"})
                return
            status, obj = service.handle_classify(payload)
            self._send(status, obj)

    return Handler
