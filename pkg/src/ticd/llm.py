"""Completion clients: an OpenAI-compatible HTTP client and an offline stub.

Both expose ``complete(prompt) -> str``.  :func:`complete` wraps a client
with a per-run audit log and replays a persisted response when the prompt
is unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, fields
from pathlib import Path

import requests

from .exceptions import ConfigError, MissingCredentialError, TransportError

__all__ = [
    "ClientConfig",
    "StubClient",
    "HTTPClient",
    "make_client",
    "complete",
]

log = logging.getLogger(__name__)

PROMPT_FILE = "prompt.txt"
RESPONSE_FILE = "response.txt"


@dataclass
class ClientConfig:
    """``kind`` is ``"http"`` or ``"stub"``.

    HTTP clients read the API key from the environment variable named by
    ``api_key_env`` at call time; failed requests are retried ``retries``
    times with exponential backoff starting at ``backoff_s`` seconds.
    """

    kind: str = "stub"
    endpoint: str | None = None
    model: str | None = None
    timeout_s: float = 60.0
    api_key_env: str = "OPENAI_API_KEY"
    stub_path: str | None = None
    retries: int = 2
    backoff_s: float = 1.0
    temperature: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in ("http", "stub"):
            raise ConfigError(f"client kind must be 'http' or 'stub', got {self.kind!r}")
        if self.kind == "stub" and not self.stub_path:
            raise ConfigError("stub client needs 'stub_path'")
        if self.kind == "http":
            if not self.endpoint or not self.model:
                raise ConfigError("http client needs 'endpoint' and 'model'")
            if not self.api_key_env:
                raise ConfigError("http client needs 'api_key_env'")
        if self.timeout_s <= 0:
            raise ConfigError(f"timeout_s must be positive, got {self.timeout_s}")
        if self.retries < 0 or self.backoff_s < 0:
            raise ConfigError("retries and backoff_s must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> ClientConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown client config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> ClientConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise ConfigError(f"client config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"client config {path} is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class StubClient:
    """Returns the contents of a text file verbatim."""

    def __init__(self, path):
        self.path = Path(path)

    def complete(self, prompt: str) -> str:
        try:
            return self.path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read stub response {self.path}: {exc}") from exc


class HTTPClient:
    """Chat-completion client for OpenAI-compatible endpoints."""

    def __init__(self, config: ClientConfig, session=None, sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep

    @property
    def url(self) -> str:
        base = self.config.endpoint.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"

    def complete(self, prompt: str) -> str:
        cfg = self.config
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise MissingCredentialError(cfg.api_key_env)
        body = {"model": cfg.model, "messages": [{"role": "user", "content": prompt}],
                "temperature": cfg.temperature}
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        last = None
        for attempt in range(cfg.retries + 1):
            if attempt:
                delay = cfg.backoff_s * 2 ** (attempt - 1)
                log.warning("retrying completion (attempt %d of %d) in %.1fs: %s",
                            attempt + 1, cfg.retries + 1, delay, last)
                self._sleep(delay)
            try:
                resp = self.session.post(self.url, json=body, headers=headers, timeout=cfg.timeout_s)
            except requests.Timeout:
                last = TransportError(f"request to {self.url} timed out after {cfg.timeout_s}s")
                continue
            except requests.RequestException as exc:
                last = TransportError(f"request to {self.url} failed: {exc}")
                continue
            if not 200 <= resp.status_code < 300:
                last = TransportError(f"endpoint {self.url} returned HTTP {resp.status_code}",
                                      status=resp.status_code)
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                # a malformed body is not retried: the server answered
                raise TransportError(f"unexpected response body from {self.url}: {exc}",
                                     status=resp.status_code) from exc
        raise last


def make_client(config: ClientConfig | dict):
    if isinstance(config, dict):
        config = ClientConfig.from_dict(config)
    if config.kind == "stub":
        return StubClient(config.stub_path)
    return HTTPClient(config)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def complete(client, prompt: str, log_dir=None, replay: bool = True) -> str:
    """Run one completion and persist ``prompt.txt`` / ``response.txt``.

    With ``replay`` a response already stored in ``log_dir`` for the same
    prompt is returned without contacting the client.
    """
    if log_dir is None:
        return client.complete(prompt)
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    p_file, r_file = log_dir / PROMPT_FILE, log_dir / RESPONSE_FILE
    if replay and p_file.exists() and r_file.exists():
        if _digest(p_file.read_text()) == _digest(prompt):
            log.info("replaying persisted response from %s", r_file)
            return r_file.read_text()
        log.info("prompt changed since the persisted response; querying the client")
    text = client.complete(prompt)
    p_file.write_text(prompt)
    r_file.write_text(text)
    return text
