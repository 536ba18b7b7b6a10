"""Chat-completion gateway: HTTP backend, scripted backend, usage ledger,
and the tolerant parsers that turn free-text responses into fields.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .errors import CompletionError, ParseError, ScriptError, TransportError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must not be empty")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 1.0
    seed: int | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request must carry at least one message")
        if self.messages[0].role != "system":
            raise ValueError("first message must be the agent system prompt")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def prompt_chars(self) -> int:
        return sum(len(m.content) for m in self.messages)


def make_request(model: str, system: str, user: str, temperature: float, seed: int | None = None) -> ChatRequest:
    return ChatRequest(
        model=model,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
        temperature=temperature,
        seed=seed,
    )


def reprompt_request(request: ChatRequest, previous_response: str, instruction: str) -> ChatRequest:
    """Extend a request with the failed response and a corrective instruction."""
    extra = (ChatMessage("assistant", previous_response or "(empty)"), ChatMessage("user", instruction))
    return replace(request, messages=request.messages + extra)


@dataclass(frozen=True)
class CallKey:
    """Routing key for one completion: stage name, turn, agent index."""

    stage: str
    turn: int
    agent: int

    def path(self) -> str:
        return f"{self.stage}/{self.turn}/{self.agent}"

    def retry(self) -> "CallKey":
        return CallKey(f"{self.stage}_retry", self.turn, self.agent)


@dataclass
class StageUsage:
    calls: int = 0
    attempts: int = 0
    prompt_chars: int = 0
    completion_chars: int = 0
    wall_time: float = 0.0


class UsageLedger:
    """Per-stage call accounting, safe for concurrent writers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._stages: dict[str, StageUsage] = {}

    def _get(self, stage: str) -> StageUsage:
        return self._stages.setdefault(stage, StageUsage())

    def record_attempt(self, stage: str) -> None:
        with self._lock:
            self._get(stage).attempts += 1

    def record(self, stage: str, prompt_chars: int, completion_chars: int, wall_time: float) -> None:
        with self._lock:
            usage = self._get(stage)
            usage.calls += 1
            usage.prompt_chars += prompt_chars
            usage.completion_chars += completion_chars
            usage.wall_time += wall_time

    def stage(self, name: str) -> StageUsage:
        with self._lock:
            found = self._stages.get(name)
            return replace(found) if found else StageUsage()

    @property
    def calls(self) -> int:
        with self._lock:
            return sum(u.calls for u in self._stages.values())

    def to_json(self) -> dict:
        # wall_time is deliberately left out: serialized results must be
        # byte-identical across identical runs.
        with self._lock:
            return {
                name: {
                    "calls": u.calls,
                    "attempts": u.attempts,
                    "prompt_chars": u.prompt_chars,
                    "completion_chars": u.completion_chars,
                }
                for name, u in sorted(self._stages.items())
            }


class ScriptedBackend:
    """Deterministic backend answering from a {stage/turn/agent: text} map."""

    def __init__(self, script: Mapping[str, str]):
        self.script = dict(script)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(obj, dict) or not all(isinstance(v, str) for v in obj.values()):
            raise ScriptError(f"script file {path} must be a JSON object mapping keys to strings")
        return cls(obj)

    def complete(self, request: ChatRequest, key: CallKey) -> str:
        try:
            return self.script[key.path()]
        except KeyError:
            raise ScriptError(f"no scripted response for call key {key.path()!r}") from None


class HttpChatBackend:
    """Client for the JSON chat protocol:
    POST {model, messages, temperature, seed?} -> {choices: [{message: {content}}]}.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "SCITEAM_CHAT_API_KEY",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        headers = {}
        key = os.environ.get(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, request: ChatRequest, key: CallKey) -> str:
        payload: dict = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=payload)
        except httpx.TransportError as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"chat server returned {resp.status_code}")
        if resp.status_code >= 400:
            raise CompletionError(f"chat request rejected: {resp.status_code} {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise CompletionError(f"malformed chat response: {exc}") from exc


def complete(
    backend,
    request: ChatRequest,
    key: CallKey,
    ledger: UsageLedger,
    max_attempts: int = 3,
    backoff: float = 0.25,
) -> str:
    """One completion with bounded transport retries and one empty re-ask.

    Every attempt bumps the stage's attempts counter; calls and character
    counts are recorded once, on success.
    """
    last: Exception | None = None
    asked_again = False
    attempt = 0
    while attempt < max_attempts:
        attempt += 1
        ledger.record_attempt(key.stage)
        start = time.monotonic()
        try:
            text = backend.complete(request, key)
        except TransportError as exc:
            last = exc
            if attempt < max_attempts:
                time.sleep(backoff * 2 ** (attempt - 1))
            continue
        if not text.strip():
            if asked_again:
                raise CompletionError(f"empty completion for {key.path()} after a re-ask")
            asked_again = True
            attempt -= 1  # the re-ask replaces the empty attempt, it is not a transport retry
            continue
        ledger.record(key.stage, request.prompt_chars, len(text), time.monotonic() - start)
        return text
    raise TransportError(f"completion for {key.path()} failed after {max_attempts} attempts: {last}")


@dataclass(frozen=True)
class FieldSpec:
    """One labeled field expected in a structured response."""

    name: str
    kind: str = "text"  # "text" | "int"
    required: bool = True
    minimum: int | None = None
    maximum: int | None = None
    label: str | None = None

    @property
    def effective_label(self) -> str:
        return self.label if self.label is not None else self.name.replace("_", " ").title()


def parse_structured(response: str, schema: Sequence[FieldSpec]) -> dict:
    """Extract labeled sections ("Label: value") from a response.

    Text fields run until the next known label; integer fields take the
    first integer on the label's line and are range-checked. A missing
    required field raises ParseError carrying the raw response.
    """
    by_label = {f.effective_label.lower(): f for f in schema}
    alternatives = "|".join(re.escape(f.effective_label) for f in schema)
    pattern = re.compile(rf"^[ \t>#*-]*\**({alternatives})\**\s*:\s*", re.IGNORECASE | re.MULTILINE)
    matches = list(pattern.finditer(response))
    segments: dict[str, str] = {}
    for i, m in enumerate(matches):
        label = m.group(1).lower()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(response)
        if label not in segments:  # first occurrence wins
            segments[label] = response[m.end() : end].strip()
    out: dict = {}
    for spec in schema:
        label = spec.effective_label.lower()
        if label not in segments:
            if spec.required:
                raise ParseError(f"missing required field {spec.effective_label!r}", raw=response)
            continue
        value = segments[label]
        if spec.kind == "int":
            first_line = value.splitlines()[0] if value else ""
            m = re.search(r"-?\d+", first_line)
            if m is None:
                raise ParseError(f"field {spec.effective_label!r} has no integer value", raw=response)
            number = int(m.group())
            if spec.minimum is not None and number < spec.minimum:
                raise ParseError(
                    f"field {spec.effective_label!r} = {number} below minimum {spec.minimum}", raw=response
                )
            if spec.maximum is not None and number > spec.maximum:
                raise ParseError(
                    f"field {spec.effective_label!r} = {number} above maximum {spec.maximum}", raw=response
                )
            out[spec.name] = number
        else:
            out[spec.name] = value
    return out


_ORDINALS = {"first": 1, "one": 1, "1st": 1, "second": 2, "two": 2, "2nd": 2, "third": 3, "three": 3, "3rd": 3}

_VOTE_PASSES = (
    re.compile(r"\b(?:choice|vote|decision|selection)\s*[:\-]\s*(?:idea\s*)?#?\s*(\d+)", re.IGNORECASE),
    re.compile(
        r"\b(?:choose|pick|select|prefer|support|back|favor|go with|vote for)\s+(?:the\s+)?(?:idea\s*)?#?\s*(\d+)",
        re.IGNORECASE,
    ),
    re.compile(r"\bidea\s*#?\s*(\d+)", re.IGNORECASE),
    re.compile(
        r"\b(?:choose|pick|select|prefer|support|back|favor|go with|vote for)\s+(?:the\s+)?(first|second|third|1st|2nd|3rd)\b",
        re.IGNORECASE,
    ),
    re.compile(r"\bthe\s+(first|second|third)\s+(?:idea|one|option|proposal)\b", re.IGNORECASE),
    re.compile(r"^\s*#?\s*(\d+)\s*\.?\s*$", re.IGNORECASE),
)


def parse_vote(response: str, n_choices: int) -> int | None:
    """Pull the voted idea number out of a free-text vote response.

    Passes run from most explicit (a labeled CHOICE) to least; within a
    pass the first in-range match wins. Returns None when nothing
    usable appears.
    """
    for pattern in _VOTE_PASSES:
        for m in pattern.finditer(response):
            token = m.group(1).lower()
            number = _ORDINALS.get(token) if not token.isdigit() else int(token)
            if number is not None and 1 <= number <= n_choices:
                return number
    return None


_DECISION_RE = re.compile(r"\bdecision\s*[:\-]\s*\**\s*(accept|reject|yes|no|agree|decline)", re.IGNORECASE)
_DECISION_LEAD_RE = re.compile(r"^\s*\**\s*(accept|reject)\b", re.IGNORECASE)


def parse_decision(response: str) -> bool | None:
    """ACCEPT/REJECT from an invitation response, None if unparseable."""
    m = _DECISION_RE.search(response) or _DECISION_LEAD_RE.search(response)
    if m is None:
        return None
    return m.group(1).lower() in ("accept", "yes", "agree")


_VERDICT_RE = re.compile(r"\bnovel\s*[:\-]\s*\**\s*(yes|no|true|false)", re.IGNORECASE)
_VERDICT_ALT_RE = re.compile(r"\bverdict\s*[:\-]\s*\**\s*(not\s+novel|novel|pass|fail)", re.IGNORECASE)


def parse_novelty_verdict(response: str) -> bool | None:
    """True when the reviewer judged the text novel, None if unparseable."""
    m = _VERDICT_RE.search(response)
    if m:
        return m.group(1).lower() in ("yes", "true")
    m = _VERDICT_ALT_RE.search(response)
    if m:
        return m.group(1).lower() in ("novel", "pass")
    return None


_CONTINUE_RE = re.compile(r"\bdecision\s*[:\-]\s*\**\s*(continue|stop)", re.IGNORECASE)
_CONTINUE_WORD_RE = re.compile(r"\b(continue|stop)\b", re.IGNORECASE)


def parse_continue(response: str) -> bool | None:
    """True to run another turn, False to stop, None if unparseable."""
    m = _CONTINUE_RE.search(response) or _CONTINUE_WORD_RE.search(response)
    if m is None:
        return None
    return m.group(1).lower() == "continue"
