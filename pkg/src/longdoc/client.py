"""Chat-completion clients over the OpenAI-compatible wire protocol.

Two implementations share one interface: an HTTP client with bounded retries
for real endpoints, and a deterministic mock driven by match rules so every
pipeline in this repository is bit-reproducible under test. Batch completion
preserves input order and isolates per-request failures.
"""

from __future__ import annotations

import base64
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import httpx

DEFAULT_SYSTEM_PROMPT = "You are a helpful assistant."

ROLES = ("system", "user", "assistant")


class GenerationError(RuntimeError):
    """Completion failed: exhausted retries, malformed response, bad config."""


def text_item(text: str) -> dict:
    return {"type": "text", "text": text}


def image_item(image_ref: str) -> dict:
    return {"type": "image", "image_ref": image_ref}


def message(role: str, items: list[dict]) -> dict:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    return {"role": role, "content": items}


@dataclass
class ChatRequest:
    model: str
    messages: list[dict]
    temperature: float = 0.0
    max_output_tokens: int = 1024
    request_tag: str = ""

    def validate(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")

    def flattened_text(self) -> str:
        """All text content plus image refs, for mock substring matching."""
        parts = []
        for msg in self.messages:
            for item in msg["content"]:
                if item["type"] == "text":
                    parts.append(item["text"])
                elif item["type"] == "image":
                    parts.append(item["image_ref"])
        return "\n".join(parts)


@dataclass
class GenerationResult:
    text: str
    finish_reason: str  # stop | length | error
    usage: dict = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0})
    request_tag: str = ""
    error: str | None = None

    def __post_init__(self):
        if self.finish_reason == "error" and not self.error:
            raise ValueError("error result needs an error detail")


def _rough_tokens(text: str) -> int:
    return max(1, (len(text) + 3) // 4) if text else 0


class BaseClient:
    """Shared batch machinery; subclasses implement complete()."""

    def complete(self, request: ChatRequest) -> GenerationResult:
        raise NotImplementedError

    def complete_batch(self, requests: list[ChatRequest], max_in_flight: int = 8) -> list[GenerationResult]:
        """Run requests with at most max_in_flight outstanding; results come
        back in input order and one failure never aborts the rest."""
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

        def run_one(req: ChatRequest) -> GenerationResult:
            try:
                return self.complete(req)
            except Exception as exc:  # per-entry isolation
                return GenerationResult(
                    text="", finish_reason="error", request_tag=req.request_tag,
                    error=str(exc),
                )

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = [pool.submit(run_one, req) for req in requests]
            return [f.result() for f in futures]


@dataclass
class EndpointConfig:
    base_url: str | None = None
    api_key: str | None = None
    max_attempts: int = 5
    backoff_initial: float = 1.0
    backoff_factor: float = 2.0
    backoff_jitter: float = 0.2
    timeout: float = 120.0

    def resolve(self) -> "EndpointConfig":
        base = self.base_url or os.getenv("GENAI_BASE_URL")
        key = self.api_key or os.getenv("GENAI_API_KEY")
        if not base:
            raise GenerationError("no endpoint: set GENAI_BASE_URL or configure base_url")
        if not key:
            raise GenerationError("no credential: set GENAI_API_KEY")
        return EndpointConfig(
            base_url=base.rstrip("/"), api_key=key,
            max_attempts=self.max_attempts, backoff_initial=self.backoff_initial,
            backoff_factor=self.backoff_factor, backoff_jitter=self.backoff_jitter,
            timeout=self.timeout,
        )


def _encode_image(image_ref: str) -> str:
    path = Path(image_ref)
    if not path.exists():
        raise GenerationError(f"image ref does not resolve: {image_ref}")
    payload = base64.b64encode(path.read_bytes()).decode("ascii")
    suffix = path.suffix.lstrip(".").lower() or "png"
    return f"data:image/{suffix};base64,{payload}"


def _wire_messages(messages: list[dict]) -> list[dict]:
    wire = []
    for msg in messages:
        content = []
        for item in msg["content"]:
            if item["type"] == "text":
                content.append({"type": "text", "text": item["text"]})
            else:
                content.append({
                    "type": "image_url",
                    "image_url": {"url": _encode_image(item["image_ref"])},
                })
        wire.append({"role": msg["role"], "content": content})
    return wire


class HttpClient(BaseClient):
    """POSTs to {base}/v1/chat/completions. Retries 429 and 5xx with
    exponential backoff; any other 4xx fails immediately. Thread-safe: the
    underlying connection pool is shared and the retry state is per-call."""

    def __init__(self, config: EndpointConfig | None = None):
        self.config = (config or EndpointConfig()).resolve()
        self._http = httpx.Client(timeout=self.config.timeout)
        self._rng = random.Random()
        self.last_attempts = 0

    def complete(self, request: ChatRequest) -> GenerationResult:
        request.validate()
        url = f"{self.config.base_url}/v1/chat/completions"
        headers = {
            "Authorization": f"Bearer {self.config.api_key}",
            "Content-Type": "application/json",
        }
        body = {
            "model": request.model,
            "messages": _wire_messages(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

        delay = self.config.backoff_initial
        last_error = "no attempts made"
        attempts = 0
        for attempt in range(self.config.max_attempts):
            attempts = attempt + 1
            try:
                resp = self._http.post(url, headers=headers, json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    self.last_attempts = attempts
                    return self._parse(resp, request.request_tag)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                else:
                    self.last_attempts = attempts
                    raise GenerationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if attempt + 1 < self.config.max_attempts:
                jitter = 1.0 + self._rng.uniform(-self.config.backoff_jitter, self.config.backoff_jitter)
                time.sleep(delay * jitter)
                delay *= self.config.backoff_factor
        self.last_attempts = attempts
        raise GenerationError(
            f"exhausted {self.config.max_attempts} attempts ({last_error})"
        )

    def _parse(self, resp: httpx.Response, tag: str) -> GenerationResult:
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
            usage = payload.get("usage", {})
        except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
            raise GenerationError(f"malformed response: {exc}") from exc
        return GenerationResult(
            text=text,
            finish_reason="length" if finish == "length" else "stop",
            usage={
                "prompt_tokens": usage.get("prompt_tokens", 0),
                "completion_tokens": usage.get("completion_tokens", 0),
            },
            request_tag=tag,
        )

    def close(self) -> None:
        self._http.close()


@dataclass
class MockRule:
    response_text: str
    tag: str | None = None
    substring: str | None = None
    latency_ms: float = 0.0

    def matches(self, request: ChatRequest) -> bool:
        if self.tag is not None:
            return request.request_tag == self.tag
        if self.substring is not None:
            return self.substring in request.flattened_text() or self.substring in request.request_tag
        return False


class MockMissError(GenerationError):
    """No mock rule matched; fixtures are incomplete for this pipeline."""


class MockClient(BaseClient):
    """Deterministic stand-in: first matching rule wins. Tracks in-flight
    peaks and per-rule hit counts for concurrency and retry assertions."""

    def __init__(self, rules: list[MockRule] | None = None):
        self.rules = list(rules or [])
        self.calls: list[str] = []
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0

    @classmethod
    def from_fixture(cls, path: str | Path) -> "MockClient":
        """JSONL rules: {"match": {"tag": ...} | {"substring": ...},
        "response_text": ..., "latency_ms"?: ...}."""
        rules = []
        with Path(path).open(encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                record = json.loads(raw)
                match = record.get("match", {})
                if not ("tag" in match or "substring" in match):
                    raise ValueError(f"line {line_no}: rule needs a tag or substring matcher")
                rules.append(MockRule(
                    response_text=record["response_text"],
                    tag=match.get("tag"),
                    substring=match.get("substring"),
                    latency_ms=float(record.get("latency_ms", 0.0)),
                ))
        return cls(rules)

    @classmethod
    def from_tag_map(cls, mapping: dict[str, str]) -> "MockClient":
        return cls([MockRule(response_text=v, tag=k) for k, v in mapping.items()])

    def add_rule(self, rule: MockRule) -> None:
        self.rules.append(rule)

    def complete(self, request: ChatRequest) -> GenerationResult:
        request.validate()
        with self._lock:
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
            self.calls.append(request.request_tag)
            self.requests.append(request)
        try:
            for rule in self.rules:
                if rule.matches(request):
                    if rule.latency_ms:
                        time.sleep(rule.latency_ms / 1000.0)
                    text = rule.response_text
                    return GenerationResult(
                        text=text,
                        finish_reason="stop",
                        usage={
                            "prompt_tokens": _rough_tokens(request.flattened_text()),
                            "completion_tokens": _rough_tokens(text),
                        },
                        request_tag=request.request_tag,
                    )
            raise MockMissError(
                f"no mock rule matched request tag {request.request_tag!r}"
            )
        finally:
            with self._lock:
                self._in_flight -= 1
