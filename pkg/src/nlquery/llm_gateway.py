"""Pluggable completion backends, prompt templates, and output extraction.

Two backends ship here: an HTTP chat-completion adapter (neutral JSON shape,
configurable URL/model/auth) and a scripted backend that returns canned
responses for offline, deterministic end-to-end runs. Five prompt templates
(one per pipeline stage) live as versioned text files under prompts/; they
are this project's own and part of its external interface.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources

import httpx

TEMPLATE_IDS = ("classify_intent", "generate_sql", "introspect", "refine_sql", "answer")

# Placeholders that are always substitutable: the pipeline binds them, but a
# caller rendering a template standalone gets sensible defaults instead of an
# error. Everything else in a template is a required binding.
_AUX_DEFAULTS = {"history": "(no previous turns)", "dialect": "SQLite"}

_PLACEHOLDER_RE = re.compile(r"\$\{([a-z_]+)\}")
_SQL_FENCE_RE = re.compile(r"```sql\s*\n(.*?)```", re.IGNORECASE | re.DOTALL)
_SQL_START_RE = re.compile(r"\b(SELECT|WITH)\b", re.IGNORECASE)
_VERDICT_RE = re.compile(r"^\s*VERDICT\s*:\s*(PASS|FAIL)\b.*$", re.IGNORECASE | re.MULTILINE)


class BackendUnavailable(Exception):
    """The backend could not produce a completion (after retries, if any)."""


class GatewayTimeout(BackendUnavailable):
    """The per-request deadline elapsed."""


class TransientBackendError(Exception):
    """Internal: a transport-level failure worth retrying."""


class MissingBinding(Exception):
    def __init__(self, placeholder: str):
        super().__init__(f"missing binding: {placeholder!r}")
        self.placeholder = placeholder


class ExtractionError(Exception):
    """No SQL statement could be extracted from the model output."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    rendered_prompt: str
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template_id: {self.template_id!r}")
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class Completion:
    text: str
    backend_id: str
    latency_ms: int = 0


@dataclass
class ScriptEntry:
    """One canned response: fires when the request uses template_id and the
    rendered prompt contains the `contains` substring ("" matches any)."""

    template_id: str
    contains: str
    response: str


class ScriptedBackend:
    """Deterministic offline backend: first matching entry wins.

    Every request is recorded in .calls so tests can assert on rendered
    prompts.
    """

    backend_id = "scripted"

    def __init__(self, entries: list[ScriptEntry]):
        self.entries = list(entries)
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.calls.append(request)
        for entry in self.entries:
            if entry.template_id == request.template_id and entry.contains in request.rendered_prompt:
                return entry.response
        raise BackendUnavailable(
            f"NoScriptMatch: no scripted entry for template {request.template_id!r}"
        )

    def prompts_for(self, template_id: str) -> list[str]:
        with self._lock:
            return [c.rendered_prompt for c in self.calls if c.template_id == template_id]

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        """Load a script from a JSON file: a list of
        {"template": ..., "contains": ..., "response": ...} objects."""
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        entries = [
            ScriptEntry(
                template_id=item["template"],
                contains=item.get("contains", ""),
                response=item["response"],
            )
            for item in raw
        ]
        return cls(entries)


class HttpChatBackend:
    """Neutral chat-completion adapter.

    Request: {model, messages: [{role, content}], temperature, max_tokens};
    response: standard chat shape with choices[0].message.content. The auth
    secret is read from the environment at call time, never stored in config.
    """

    def __init__(
        self,
        url: str,
        model: str,
        auth_env_var: str | None = None,
        timeout_s: float = 60.0,
        model_by_template: dict[str, str] | None = None,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.model = model
        self.auth_env_var = auth_env_var
        self.model_by_template = model_by_template or {}
        self.backend_id = f"http:{model}"
        self._client = client or httpx.Client(timeout=timeout_s)

    def complete(self, request: CompletionRequest) -> str:
        payload = {
            "model": self.model_by_template.get(request.template_id, self.model),
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {}
        if self.auth_env_var and os.environ.get(self.auth_env_var):
            headers["Authorization"] = f"Bearer {os.environ[self.auth_env_var]}"
        try:
            response = self._client.post(self.url, json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"completion timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientBackendError(str(exc)) from exc
        if response.status_code >= 500:
            raise TransientBackendError(f"backend returned {response.status_code}")
        if response.status_code >= 400:
            raise BackendUnavailable(f"backend rejected request: {response.status_code} {response.text[:200]}")
        data = response.json()
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed backend response: {exc}") from exc


class _TokenBucket:
    """requests-per-minute limiter; refills continuously."""

    def __init__(self, per_minute: int, clock=time.monotonic, sleep=time.sleep):
        self.capacity = float(per_minute)
        self.tokens = float(per_minute)
        self.rate = per_minute / 60.0
        self.updated = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


class Gateway:
    """Front door for completions: retry with exponential backoff on
    transient transport errors, optional rate limiting, latency accounting.
    Safe to call concurrently from multiple pipeline sessions."""

    def __init__(
        self,
        backend,
        retry_max: int = 2,
        backoff_base_s: float = 0.5,
        rate_limit_per_minute: int | None = None,
        sleep=time.sleep,
    ):
        self.backend = backend
        self.retry_max = retry_max
        self.backoff_base_s = backoff_base_s
        self._sleep = sleep
        self._bucket = (
            _TokenBucket(rate_limit_per_minute, sleep=sleep) if rate_limit_per_minute else None
        )

    def complete(self, request: CompletionRequest) -> Completion:
        if self._bucket is not None:
            self._bucket.acquire()
        start = time.monotonic()
        attempt = 0
        while True:
            try:
                text = self.backend.complete(request)
                break
            except TransientBackendError as exc:
                if attempt >= self.retry_max:
                    raise BackendUnavailable(f"backend unavailable after {attempt + 1} attempts: {exc}") from exc
                self._sleep(self.backoff_base_s * (2 ** attempt))
                attempt += 1
        latency_ms = int((time.monotonic() - start) * 1000)
        backend_id = getattr(self.backend, "backend_id", type(self.backend).__name__)
        return Completion(text=text, backend_id=backend_id, latency_ms=latency_ms)


def _load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise ValueError(f"unknown template_id: {template_id!r}")
    return resources.files("nlquery").joinpath(f"prompts/{template_id}.txt").read_text("utf-8")


_template_cache: dict[str, str] = {}


def render_template(template_id: str, bindings: dict) -> str:
    """Substitute ${placeholder} slots in the template. Deterministic: equal
    bindings yield byte-equal prompts.

    history and dialect fall back to defaults when unbound; any other
    unbound placeholder raises MissingBinding naming it.
    """
    if template_id not in _template_cache:
        _template_cache[template_id] = _load_template(template_id)
    template = _template_cache[template_id]

    def replace(match: re.Match) -> str:
        name = match.group(1)
        if name in bindings:
            return str(bindings[name])
        if name in _AUX_DEFAULTS:
            return _AUX_DEFAULTS[name]
        raise MissingBinding(name)

    return _PLACEHOLDER_RE.sub(replace, template)


def _cut_at_statement_end(sql: str) -> str:
    """Keep text up to the first semicolon outside single quotes; strip the
    trailing semicolon itself."""
    out = []
    in_quote = False
    i = 0
    while i < len(sql):
        ch = sql[i]
        if in_quote:
            if ch == "'":
                if i + 1 < len(sql) and sql[i + 1] == "'":
                    out.append("''")
                    i += 2
                    continue
                in_quote = False
        elif ch == "'":
            in_quote = True
        elif ch == ";":
            break
        out.append(ch)
        i += 1
    return "".join(out).strip()


def extract_sql(text: str) -> str:
    """Pull exactly one SQL statement out of free-form model output.

    Preference order: the body of a ```sql fenced block; otherwise the first
    run of text starting with SELECT or WITH (case-insensitive), up to a
    terminating semicolon or end of text.
    """
    fence = _SQL_FENCE_RE.search(text)
    if fence:
        body = _cut_at_statement_end(fence.group(1).strip())
        if body:
            return body
        raise ExtractionError("fenced sql block is empty", raw_text=text)
    start = _SQL_START_RE.search(text)
    if start:
        body = _cut_at_statement_end(text[start.start():].strip())
        if body:
            return body
    raise ExtractionError("no SQL statement found in model output", raw_text=text)


@dataclass
class Verdict:
    passed: bool
    critique: str


def extract_verdict(text: str) -> Verdict:
    """Parse an introspection response.

    Looks for a "VERDICT: PASS" or "VERDICT: FAIL" line; the critique is the
    remaining text. A missing marker is a FAIL with the full text as critique,
    so malformed validator output triggers refinement instead of silently
    passing.
    """
    match = _VERDICT_RE.search(text)
    if not match:
        return Verdict(passed=False, critique=text.strip())
    passed = match.group(1).upper() == "PASS"
    critique = (text[: match.start()] + text[match.end():]).strip()
    return Verdict(passed=passed, critique=critique)
