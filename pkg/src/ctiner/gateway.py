"""Single abstraction over chat-completion backends with caching and budgets.

Backends are either a remote OpenAI-compatible endpoint or a deterministic
scripted mock; the gateway in front of them adds a content-addressed disk
cache, bounded retry on transient transport failures, a thread-safe call
budget, and a global parallelism bound. Determinism for replay comes from
the cache: identical requests (model, messages, temperature) hit the same
cache entry.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .corpus import EntityMention, LabelSchema
from .errors import AuthError, BudgetExceeded, TransportError


@dataclass(frozen=True)
class ChatRequest:
    """One chat completion call; request_tag is a provenance/routing string."""

    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int | None = None
    request_tag: str = ""

    @classmethod
    def user(cls, model_id: str, prompt: str, tag: str = "",
             temperature: float = 0.0) -> "ChatRequest":
        return cls(model_id=model_id, messages=(("user", prompt),),
                   temperature=temperature, request_tag=tag)

    def content(self) -> str:
        return "\n".join(text for _, text in self.messages)

    def cache_key(self) -> str:
        payload = {
            "model_id": self.model_id,
            "messages": [list(m) for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


@dataclass
class MockRule:
    """Respond with `response` when `match` ('*' or substring) hits the request.

    A list response is consumed one element per call (last repeats); a
    callable receives the ChatRequest.
    """

    match: str
    response: str | list[str] | Callable[[ChatRequest], str]
    _cursor: int = field(default=0, repr=False)

    def matches(self, request: ChatRequest) -> bool:
        return self.match == "*" or self.match in request.content()

    def answer(self, request: ChatRequest) -> str:
        if callable(self.response):
            return self.response(request)
        if isinstance(self.response, list):
            idx = min(self._cursor, len(self.response) - 1)
            self._cursor += 1
            return self.response[idx]
        return self.response


@dataclass
class MockScript:
    """Ordered first-match-wins rules plus a default response."""

    rules: list[MockRule] = field(default_factory=list)
    default: str = "[]"

    def respond(self, request: ChatRequest) -> str:
        for rule in self.rules:
            if rule.matches(request):
                return rule.answer(request)
        return self.default


class MockBackend:
    def __init__(self, script: MockScript):
        self.script = script
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        return self.script.respond(request)


class RemoteBackend:
    """OpenAI-compatible /chat/completions client."""

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, request: ChatRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": request.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens
        try:
            resp = requests.post(f"{self.base_url}/chat/completions", json=body,
                                 headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            err = TransportError(f"chat request failed: {exc}")
            err.transient = True
            raise err from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"backend rejected credential ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            err = TransportError(f"backend returned {resp.status_code}")
            err.transient = True
            raise err
        if resp.status_code != 200:
            err = TransportError(
                f"backend returned {resp.status_code}: {resp.text[:200]}")
            err.transient = False
            raise err
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            err = TransportError(f"malformed chat response: {exc}")
            err.transient = False
            raise err from exc


class LlmGateway:
    """Cache + budget + retry front for a chat backend.

    Cache entries are JSON files keyed by a hash of (model, messages,
    temperature, max_tokens); a hit never touches the backend or the budget.
    """

    MAX_RETRIES = 5

    def __init__(self, backend: ChatBackend, cache_dir: str | Path | None = None,
                 max_calls: int | None = None, max_parallel: int = 4,
                 enforce_zero_temperature: bool = True,
                 sleep_fn: Callable[[float], None] = time.sleep,
                 backoff_base: float = 0.5):
        self.backend = backend
        self.cache_dir = Path(cache_dir) / "chat" if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_calls = max_calls
        self.enforce_zero_temperature = enforce_zero_temperature
        self.sleep_fn = sleep_fn
        self.backoff_base = backoff_base
        self.backend_calls = 0
        self.cache_hits = 0
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_parallel)

    def stats(self) -> dict:
        return {"backend_calls": self.backend_calls, "cache_hits": self.cache_hits}

    def _cache_path(self, key: str) -> Path | None:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def complete(self, request: ChatRequest) -> str:
        if self.enforce_zero_temperature and request.temperature != 0:
            raise ValueError(
                f"temperature {request.temperature} in reproducibility mode "
                f"(tag {request.request_tag!r})")
        path = self._cache_path(request.cache_key())
        if path and path.exists():
            with self._lock:
                self.cache_hits += 1
            return json.loads(path.read_text(encoding="utf-8"))["response"]
        with self._lock:
            if self.max_calls is not None and self.backend_calls >= self.max_calls:
                raise BudgetExceeded(
                    f"call budget of {self.max_calls} exhausted "
                    f"(tag {request.request_tag!r})")
            self.backend_calls += 1
        response = self._call_with_retry(request)
        if path:
            payload = {
                "request": {
                    "model_id": request.model_id,
                    "messages": [list(m) for m in request.messages],
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens,
                    "tag": request.request_tag,
                },
                "response": response,
            }
            path.write_text(json.dumps(payload, ensure_ascii=False, indent=1),
                            encoding="utf-8")
        return response

    def _call_with_retry(self, request: ChatRequest) -> str:
        last: TransportError | None = None
        for attempt in range(self.MAX_RETRIES + 1):
            try:
                with self._slots:
                    return self.backend.complete(request)
            except TransportError as exc:
                if not getattr(exc, "transient", False):
                    raise
                last = exc
                if attempt < self.MAX_RETRIES:
                    self.sleep_fn(self.backoff_base * (2 ** attempt))
        raise TransportError(
            f"gave up after {self.MAX_RETRIES} retries: {last}")


@dataclass
class Role:
    """A named agent role bound to a model id and a gateway.

    Tags every request with "<role>:<context>" so caches, logs, and mock
    backends can attribute and route calls.
    """

    name: str
    model_id: str
    gateway: LlmGateway

    def ask(self, prompt: str, tag: str = "") -> str:
        full_tag = f"{self.name}:{tag}" if tag else self.name
        request = ChatRequest.user(self.model_id, prompt, tag=full_tag)
        return self.gateway.complete(request)


# ---------------------------------------------------------------------------
# Structured-output parsing
# ---------------------------------------------------------------------------

@dataclass
class ParsedExtraction:
    """Entities recovered from a raw model response plus the repair trail."""

    entities: frozenset
    raw_text: str
    repair_log: list[str]


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",\s*([\]}])")


def _first_json_array(text: str) -> str | None:
    """Extract the first complete top-level JSON array, string-aware."""
    start = text.find("[")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch in "[{":
                depth += 1
            elif ch in "]}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find("[", start + 1)
    return None


def parse_entities(raw: str, schema: LabelSchema, ground_in: str | None = None,
                   strict: bool = True) -> ParsedExtraction:
    """Parse a model response into an entity set; total over arbitrary input.

    Bounded, ordered repairs: strip the first code fence, extract the first
    JSON array, drop trailing commas, then swap single quotes for double
    quotes as a last resort. Items that are not {"span","type"} objects with
    a schema type are dropped and logged. When `ground_in` is given, spans
    not found verbatim in it are dropped in strict mode and flagged
    otherwise.
    """
    log: list[str] = []
    text = raw if isinstance(raw, str) else ""
    if not isinstance(raw, str):
        log.append("non-string response treated as empty")

    fence = _FENCE_RE.search(text)
    if fence:
        text = fence.group(1)
        log.append("fence-stripped")

    array_text = _first_json_array(text)
    if array_text is None:
        log.append("no JSON array found")
        return ParsedExtraction(frozenset(), raw, log)
    if array_text.strip() != text.strip():
        log.append("array-extracted")

    items = None
    attempts = [("as-is", array_text)]
    no_commas = _TRAILING_COMMA_RE.sub(r"\1", array_text)
    if no_commas != array_text:
        attempts.append(("trailing-commas-removed", no_commas))
    requoted = no_commas.replace("'", '"')
    if requoted != no_commas:
        attempts.append(("single-quotes-replaced", requoted))
    for label, candidate in attempts:
        try:
            items = json.loads(candidate)
            if label != "as-is":
                log.append(label)
            break
        except json.JSONDecodeError:
            continue
    if items is None:
        log.append("array unparseable after repairs")
        return ParsedExtraction(frozenset(), raw, log)
    if not isinstance(items, list):
        log.append("parsed value is not a list")
        return ParsedExtraction(frozenset(), raw, log)

    mentions = set()
    for item in items:
        if not isinstance(item, dict) or "span" not in item or "type" not in item:
            log.append(f"dropped malformed item: {_shorten(item)}")
            continue
        span, etype = item["span"], item["type"]
        if not isinstance(span, str) or not isinstance(etype, str):
            log.append(f"dropped non-string item: {_shorten(item)}")
            continue
        span = span.strip()
        if not span:
            log.append("dropped empty span")
            continue
        if etype not in schema:
            log.append(f"dropped unknown type {etype!r} (span {span!r})")
            continue
        if ground_in is not None and span not in ground_in:
            if strict:
                log.append(f"dropped non-grounded span {span!r}")
                continue
            log.append(f"kept non-grounded span {span!r}")
        mentions.add(EntityMention(span, etype))
    return ParsedExtraction(frozenset(mentions), raw, log)


def _shorten(value, limit: int = 60) -> str:
    text = repr(value)
    return text if len(text) <= limit else text[:limit] + "..."


def _first_json_object(text: str) -> str | None:
    """Extract the first complete top-level JSON object, string-aware."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escape = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escape:
                    escape = False
                elif ch == "\\":
                    escape = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch in "[{":
                depth += 1
            elif ch in "]}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find("{", start + 1)
    return None


def parse_json_object(raw: str) -> dict | None:
    """Best-effort first-JSON-object parse with the same bounded repairs."""
    if not isinstance(raw, str):
        return None
    text = raw
    fence = _FENCE_RE.search(text)
    if fence:
        text = fence.group(1)
    candidate = _first_json_object(text)
    if candidate is None:
        return None
    for attempt in (candidate, _TRAILING_COMMA_RE.sub(r"\1", candidate)):
        try:
            value = json.loads(attempt)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    return None
