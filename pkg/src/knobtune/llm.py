"""LLM clients: a network chat-completion client and a scripted fixture client."""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

log = logging.getLogger(__name__)


class LLMError(RuntimeError):
    """The model could not be reached or refused to answer."""


@dataclass(frozen=True)
class LLMRequest:
    task: str
    prompt: str
    knob: str | None = None
    variant: int | None = None


class LLMClient(Protocol):
    def complete(self, request: LLMRequest) -> str: ...


@dataclass
class ChatCompletionClient:
    """OpenAI-compatible ``/chat/completions`` client."""

    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4"
    api_key: str | None = None
    api_key_env: str | None = "OPENAI_API_KEY"
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 2
    transport: httpx.BaseTransport | None = None
    _client: httpx.Client | None = field(default=None, init=False, repr=False)

    def _http(self) -> httpx.Client:
        if self._client is None:
            key = self.api_key
            if key is None and self.api_key_env:
                key = os.environ.get(self.api_key_env)
            headers = {"Content-Type": "application/json"}
            if key:
                headers["Authorization"] = f"Bearer {key}"
            self._client = httpx.Client(
                base_url=self.endpoint.rstrip("/"),
                headers=headers,
                timeout=self.timeout,
                transport=self.transport,
            )
        return self._client

    def complete(self, request: LLMRequest) -> str:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        last: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._http().post("/chat/completions", json=payload)
                resp.raise_for_status()
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                log.warning("chat completion failed for %s/%s: %s", request.task, request.knob, exc)
        raise LLMError(f"chat completion failed: {last}")

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


class ScriptedLLM:
    """Replays canned responses keyed by ``(task, knob)``.

    Each key owns a list of responses.  Requests carrying a ``variant``
    index pick ``responses[variant % len]``; other requests walk the
    list in call order and stick on the last entry.  A ``"*"`` knob entry
    is the fallback for a task.  A response of the form
    ``{"error": "..."}`` raises :class:`LLMError`.
    """

    def __init__(self, fixtures: dict[tuple[str, str], list] | None = None):
        self.fixtures: dict[tuple[str, str], list] = dict(fixtures or {})
        self.calls: list[LLMRequest] = []
        self._counts: dict[tuple[str, str], int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_dir(cls, path: str | Path) -> "ScriptedLLM":
        fixtures: dict[tuple[str, str], list] = {}
        for f in sorted(Path(path).rglob("*.json")):
            data = json.loads(f.read_text(encoding="utf-8"))
            entries = data if isinstance(data, list) else [data]
            for e in entries:
                key = (e["task"], e.get("knob") or "*")
                fixtures.setdefault(key, []).extend(e["responses"])
        return cls(fixtures)

    def add(self, task: str, knob: str | None, *responses) -> "ScriptedLLM":
        self.fixtures.setdefault((task, knob or "*"), []).extend(responses)
        return self

    def complete(self, request: LLMRequest) -> str:
        with self._lock:
            self.calls.append(request)
            key = (request.task, request.knob or "*")
            if key not in self.fixtures:
                key = (request.task, "*")
            if key not in self.fixtures:
                raise LLMError(f"no scripted response for task={request.task!r} knob={request.knob!r}")
            responses = self.fixtures[key]
            if request.variant is not None:
                resp = responses[request.variant % len(responses)]
            else:
                i = self._counts[key]
                self._counts[key] += 1
                resp = responses[min(i, len(responses) - 1)]
        if isinstance(resp, dict) and set(resp) == {"error"}:
            raise LLMError(resp["error"])
        return resp if isinstance(resp, str) else json.dumps(resp, sort_keys=True)


def parse_json_reply(text: str):
    """Extract the first JSON value from a model reply (tolerates code fences and prose)."""
    text = text.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.lower().startswith("json"):
            text = text[4:]
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(text[i:])
                return value
            except json.JSONDecodeError:
                continue
    raise ValueError(f"no JSON found in reply: {text[:80]!r}")


def client_from_config(cfg: dict) -> LLMClient:
    """Build a client from a session ``[llm]`` table."""
    if cfg.get("fixtures"):
        return ScriptedLLM.from_dir(cfg["fixtures"])
    return ChatCompletionClient(
        endpoint=cfg.get("endpoint", "https://api.openai.com/v1"),
        model=cfg.get("model", "gpt-4"),
        api_key=cfg.get("api_key"),
        api_key_env=cfg.get("api_key_env", "OPENAI_API_KEY"),
        temperature=float(cfg.get("temperature", 0.0)),
        timeout=float(cfg.get("timeout", 120.0)),
    )
