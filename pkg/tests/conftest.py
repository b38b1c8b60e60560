import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from robocell.core.types import EvaluationJob, JobStatus
from robocell.tasks import build_default_tasks


@pytest.fixture(scope="session")
def tasks():
    return build_default_tasks()


def make_running_job(task_id: str, policy_url: str, num_trials: int, job_id: str = "job-test") -> EvaluationJob:
    return EvaluationJob(
        job_id=job_id,
        submitter="tests",
        task_id=task_id,
        policy_endpoint=policy_url,
        num_trials=num_trials,
        status=JobStatus.RUNNING,
        submitted_at=0.0,
    )


class RecordingReceiver:
    """Tiny HTTP sink for webhook deliveries; can simulate downtime."""

    def __init__(self):
        receiver = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with receiver._lock:
                    if receiver.fail_remaining > 0:
                        receiver.fail_remaining -= 1
                        self.send_response(503)
                        self.end_headers()
                        return
                    receiver.deliveries.append(
                        (self.headers.get("X-Idempotency-Key"), body)
                    )
                self.send_response(200)
                self.send_header("Content-Length", "2")
                self.end_headers()
                self.wfile.write(b"ok")

        self._lock = threading.Lock()
        self.deliveries: list[tuple[str, dict]] = []
        self.fail_remaining = 0
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/hook"

    def unique_keys(self) -> set:
        with self._lock:
            return {k for k, _ in self.deliveries}

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


@pytest.fixture
def webhook_receiver():
    receiver = RecordingReceiver()
    yield receiver
    receiver.close()


class StubServer:
    """HTTP server answering /act and /classify with canned JSON bodies."""

    def __init__(self, act_body=None, classify_body=None, status=200, raw_bytes=None):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                self.rfile.read(length)
                with stub._lock:
                    stub.request_count += 1
                if stub.raw_bytes is not None:
                    self.send_response(stub.status)
                    self.send_header("Content-Length", str(len(stub.raw_bytes)))
                    self.end_headers()
                    self.wfile.write(stub.raw_bytes)
                    return
                body = stub.act_body if self.path == "/act" else stub.classify_body
                data = json.dumps(body).encode()
                self.send_response(stub.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._lock = threading.Lock()
        self.request_count = 0
        self.act_body = act_body
        self.classify_body = classify_body
        self.status = status
        self.raw_bytes = raw_bytes
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
