import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ticd.exceptions import ConfigError, MissingCredentialError, TransportError
from ticd.llm import ClientConfig, HTTPClient, StubClient, complete, make_client


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        srv = self.server
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        srv.requests.append((self.path, self.headers.get("Authorization"), body))
        plan = srv.plan.pop(0) if srv.plan else "ok"
        if plan == "slow":
            time.sleep(0.5)
            plan = "ok"
        if plan == "ok":
            payload = json.dumps({"choices": [{"message": {"content": "Answer: [(a, b, 0)]"}}]}).encode()
            self.send_response(200)
        elif plan == "garbage":
            payload = b"{not json"
            self.send_response(200)
        else:
            payload = b"{}"
            self.send_response(int(plan))
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        try:
            self.wfile.write(payload)
        except BrokenPipeError:
            pass

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.plan, srv.requests = [], []
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def client(server, monkeypatch, **kw):
    monkeypatch.setenv("TEST_LLM_KEY", "sekret")
    cfg = ClientConfig(kind="http", endpoint=f"http://127.0.0.1:{server.server_port}/v1", model="m",
                       api_key_env="TEST_LLM_KEY", **kw)
    return HTTPClient(cfg, sleep=lambda s: None)


def test_http_success(server, monkeypatch):
    c = client(server, monkeypatch, temperature=0.2)
    assert c.complete("hello") == "Answer: [(a, b, 0)]"
    path, auth, body = server.requests[0]
    assert path == "/v1/chat/completions" and auth == "Bearer sekret"
    assert body["messages"] == [{"role": "user", "content": "hello"}]
    assert body["model"] == "m" and body["temperature"] == 0.2


def test_http_retries_then_succeeds(server, monkeypatch, caplog):
    server.plan = ["500", "503"]
    c = client(server, monkeypatch, retries=2)
    assert c.complete("x").startswith("Answer:")
    assert len(server.requests) == 3
    assert sum("retrying" in r.message for r in caplog.records) == 2


def test_http_exhausted_retries(server, monkeypatch):
    server.plan = ["500", "500", "500"]
    with pytest.raises(TransportError) as exc:
        client(server, monkeypatch, retries=1).complete("x")
    assert exc.value.status == 500 and exc.value.exit_code == 4
    assert len(server.requests) == 2


def test_http_timeout(server, monkeypatch):
    server.plan = ["slow", "slow"]
    with pytest.raises(TransportError, match="timed out"):
        client(server, monkeypatch, retries=1, timeout_s=0.1).complete("x")


def test_http_malformed_body_not_retried(server, monkeypatch):
    server.plan = ["garbage"]
    with pytest.raises(TransportError, match="unexpected response body"):
        client(server, monkeypatch, retries=3).complete("x")
    assert len(server.requests) == 1


def test_backoff_is_exponential(server, monkeypatch):
    server.plan = ["500", "500", "500"]
    waits = []
    c = client(server, monkeypatch, retries=2, backoff_s=0.5)
    c._sleep = waits.append
    with pytest.raises(TransportError):
        c.complete("x")
    assert waits == [0.5, 1.0]


def test_missing_key(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY_VAR", raising=False)
    c = make_client({"kind": "http", "endpoint": "http://127.0.0.1:9", "model": "m", "api_key_env": "NO_SUCH_KEY_VAR"})
    with pytest.raises(MissingCredentialError, match="NO_SUCH_KEY_VAR") as exc:
        c.complete("x")
    assert exc.value.exit_code == 4
    assert isinstance(exc.value, ConfigError) and isinstance(exc.value, TransportError)


def test_unreachable_endpoint(monkeypatch):
    monkeypatch.setenv("K", "v")
    c = HTTPClient(ClientConfig(kind="http", endpoint="http://127.0.0.1:9", model="m", api_key_env="K",
                                retries=0, timeout_s=2))
    with pytest.raises(TransportError):
        c.complete("x")


def test_client_config_validation(tmp_path):
    for bad in (dict(kind="grpc"), dict(kind="stub"), dict(kind="http", model="m"),
                dict(kind="stub", stub_path="x", timeout_s=0), dict(kind="stub", stub_path="x", retries=-1)):
        with pytest.raises(ConfigError):
            ClientConfig(**bad)
    with pytest.raises(ConfigError):
        ClientConfig.from_dict({"kind": "stub", "stub_path": "x", "extra": 1})
    p = tmp_path / "c.json"
    cfg = ClientConfig(kind="stub", stub_path="r.txt")
    p.write_text(json.dumps(cfg.to_dict()))
    assert ClientConfig.load(p) == cfg
    with pytest.raises(ConfigError):
        ClientConfig.load(tmp_path / "missing.json")


def test_stub_client(tmp_path):
    f = tmp_path / "r.txt"
    f.write_text("Answer: [(a, b, 1)]")
    assert make_client({"kind": "stub", "stub_path": str(f)}).complete("anything") == "Answer: [(a, b, 1)]"
    with pytest.raises(ConfigError):
        StubClient(tmp_path / "none.txt").complete("x")


class _Counting:
    def __init__(self):
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return f"reply {self.calls}"


def test_complete_persists_and_replays(tmp_path):
    c = _Counting()
    assert complete(c, "p1", log_dir=tmp_path) == "reply 1"
    assert (tmp_path / "prompt.txt").read_text() == "p1"
    assert (tmp_path / "response.txt").read_text() == "reply 1"
    assert complete(c, "p1", log_dir=tmp_path) == "reply 1"
    assert c.calls == 1
    assert complete(c, "p2", log_dir=tmp_path) == "reply 2"
    assert complete(c, "p2", log_dir=tmp_path, replay=False) == "reply 3"
    assert complete(c, "p2") == "reply 4"
