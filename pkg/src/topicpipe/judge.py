"""LLM-backed topic scoring: rate a topic's top words 1-4 over a chat-completion HTTP API.

Ships a stub server speaking the same wire shape so the client can be exercised
without network access or billing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import requests

log = logging.getLogger(__name__)

TOKEN_ENV_VAR = "AUTOTM_LLM_TOKEN"

DEFAULT_JUDGE_PROMPT = (
    "You are a helpful assistant evaluating the top words of a topic model output for a given topic.\n"
    'Please rate how related the following words are to each other on a scale from 1 to 4 '
    '("1" = poorly related, "2" = rather poorly related, "3" = rather related, "4" = very related).\n'
    "Reply with a single number, indicating the overall appropriateness of the topic."
)


class JudgeUnavailableError(RuntimeError):
    """Transport kept failing after all retries."""


class UnparseableReplyError(RuntimeError):
    """No integer in [1, 4] found in any reply after all retries."""


@dataclass(frozen=True)
class LlmJudgeConfig:
    endpoint_url: str
    model: str = "gpt-4o"
    prompt_template: str = DEFAULT_JUDGE_PROMPT
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_base_s: float = 0.5
    cache_path: str | None = None


@dataclass
class RetryEvent:
    attempt: int
    reason: str
    backoff_s: float


_INT_RE = re.compile(r"\d+")


def parse_score(reply: str) -> int | None:
    """First integer token in the reply, accepted only if it lies in [1, 4]."""
    m = _INT_RE.search(reply)
    if m is None:
        return None
    value = int(m.group())
    return value if 1 <= value <= 4 else None


class JudgeClient:
    """Chat-completion client with bounded retries and an optional on-disk score cache.

    The cache is explicit (keyed by model, prompt hash and word list) so repeat
    experiment runs do not re-bill; nothing is cached implicitly.
    """

    def __init__(self, config: LlmJudgeConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.retry_log: list[RetryEvent] = []
        self._cache: dict[str, int] | None = None
        if config.cache_path:
            self._cache = {}
            path = Path(config.cache_path)
            if path.exists():
                self._cache.update(json.loads(path.read_text(encoding="utf-8")))

    def _cache_key(self, words: list[str]) -> str:
        prompt_hash = hashlib.sha256(self.config.prompt_template.encode("utf-8")).hexdigest()[:16]
        return json.dumps([self.config.model, prompt_hash, words])

    def _save_cache(self) -> None:
        if self._cache is not None and self.config.cache_path:
            Path(self.config.cache_path).write_text(
                json.dumps(self._cache, sort_keys=True), encoding="utf-8"
            )

    def _post_once(self, words: list[str]) -> str:
        joined = " ".join(words)
        system = self.config.prompt_template
        if "{words}" in system:
            system = system.format(words=joined)
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": joined},
            ],
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        resp = self.session.post(
            self.config.endpoint_url, json=body, headers=headers, timeout=self.config.timeout_s
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]

    def score_topic(self, top_words: list[str]) -> int:
        if not top_words:
            raise ValueError("top_words must be non-empty")
        words = list(top_words)
        key = self._cache_key(words)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        attempts = self.config.max_retries + 1
        last_reason = "no attempt made"
        transport_failed = False
        for attempt in range(attempts):
            try:
                reply = self._post_once(words)
            except (requests.RequestException, KeyError, ValueError) as exc:
                transport_failed = True
                last_reason = f"transport: {exc}"
            else:
                score = parse_score(reply)
                if score is not None:
                    if self._cache is not None:
                        self._cache[key] = score
                        self._save_cache()
                    return score
                transport_failed = False
                last_reason = f"unparseable reply: {reply[:80]!r}"
            if attempt + 1 < attempts:
                backoff = self.config.backoff_base_s * (2**attempt)
                self.retry_log.append(RetryEvent(attempt=attempt + 1, reason=last_reason, backoff_s=backoff))
                log.warning("judge retry %d/%d after %s", attempt + 1, self.config.max_retries, last_reason)
                time.sleep(backoff)
        if transport_failed:
            raise JudgeUnavailableError(last_reason)
        raise UnparseableReplyError(last_reason)


def llm_score_topic(
    top_words: list[str],
    config: LlmJudgeConfig,
    client: JudgeClient | None = None,
) -> int:
    """Score a topic's top words 1-4 via the configured endpoint."""
    client = client or JudgeClient(config)
    return client.score_topic(top_words)


# ---------------------------------------------------------------------------
# Stub server
# ---------------------------------------------------------------------------


@dataclass
class StubScript:
    """Scripted stub behavior: string entries are reply contents, ints are HTTP error codes."""

    entries: list = field(default_factory=list)
    default_reply: str = "3"

    def next(self):
        if self.entries:
            return self.entries.pop(0)
        return self.default_reply


class StubJudgeServer:
    """In-process HTTP server speaking the chat-completion shape, for tests and demos.

    Records every parsed request body in ``requests`` so tests can assert the
    exact prompt that went over the wire.
    """

    def __init__(self, script: StubScript | None = None, host: str = "127.0.0.1", port: int = 0):
        self.script = script or StubScript()
        self.requests: list[dict] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                outer.requests.append(body)
                entry = outer.script.next()
                if isinstance(entry, int):
                    self.send_response(entry)
                    self.end_headers()
                    return
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": entry}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, fmt, *args):
                log.debug("stub judge: " + fmt, *args)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "StubJudgeServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubJudgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
