"""Prompt construction and rate-limited multimodal API calls.

The prompt for each task kind lives as a versioned text file under
``data/templates/`` and is returned verbatim; nothing is interpolated into it.
The chart image travels separately, base64-encoded inside a provider-agnostic
request envelope that a thin transport adapter maps onto a concrete API.
"""

from __future__ import annotations

import base64
import concurrent.futures
import enum
import hashlib
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .jsonl import dumps_line, read_jsonl

_TEMPLATE_DIR = Path(__file__).resolve().parent / "data" / "templates"

DEFAULT_MODEL = "gemini-1.5-flash"
API_KEY_ENV = "MLLM_API_KEY"


class TaskKind(str, enum.Enum):
    """The six instruction-generation task kinds."""

    COT = "CoT"
    SUMMARIZATION = "Summarization"
    FACT_CHECKING = "FactChecking"
    CHART_TO_MARKDOWN = "ChartToMarkdown"
    PROGRAM_AIDED_DESIGN = "ProgramAidedDesign"
    OPEN_ENDED = "OpenEnded"


_TEMPLATE_FILES: Mapping[TaskKind, str] = {
    TaskKind.COT: "cot.txt",
    TaskKind.SUMMARIZATION: "summarization.txt",
    TaskKind.FACT_CHECKING: "fact_checking.txt",
    TaskKind.CHART_TO_MARKDOWN: "chart_to_markdown.txt",
    TaskKind.PROGRAM_AIDED_DESIGN: "program_aided.txt",
    TaskKind.OPEN_ENDED: "open_ended.txt",
}


class MissingTemplate(Exception):
    """The template file for a task kind is absent."""


class TransportError(Exception):
    """Non-retryable transport or protocol failure."""


class TransportTimeout(TransportError):
    """The request timed out in flight; treated as transient."""


class AuthError(Exception):
    """Credentials rejected; never retried."""


class RateLimitedExhausted(Exception):
    """Transient failures persisted through every allowed attempt."""


def template_path(kind: TaskKind, template_dir: Path | None = None) -> Path:
    return (template_dir or _TEMPLATE_DIR) / _TEMPLATE_FILES[kind]


def build_prompt(kind: TaskKind, template_dir: Path | None = None) -> str:
    """Return the prompt text for ``kind``, byte-equal to its template file."""
    path = template_path(kind, template_dir)
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingTemplate(f"no template for {kind.value} at {path}") from None


def template_version(kind: TaskKind, template_dir: Path | None = None) -> str:
    """Short content hash of the template; changes whenever its bytes do."""
    text = build_prompt(kind, template_dir)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]


def _short_hash(*parts: str) -> str:
    joined = "\x1f".join(parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class GenerationRequest:
    """One prompt+image call to the multimodal API.

    ``request_id`` is a deterministic function of the chart, the task kind,
    and the template version, so retries and replays address the same id.
    """

    chart_id: str
    task_kind: TaskKind
    prompt_text: str
    image_ref: str
    model_name: str
    request_id: str

    @classmethod
    def create(
        cls,
        chart_id: str,
        kind: TaskKind,
        image_ref: str,
        model_name: str = DEFAULT_MODEL,
        template_dir: Path | None = None,
    ) -> "GenerationRequest":
        version = template_version(kind, template_dir)
        return cls(
            chart_id=chart_id,
            task_kind=kind,
            prompt_text=build_prompt(kind, template_dir),
            image_ref=image_ref,
            model_name=model_name,
            request_id=_short_hash(chart_id, kind.value, version),
        )


@dataclass(frozen=True)
class RawResponse:
    """The raw outcome of one logical request, after retries."""

    request_id: str
    text: str | None
    latency_ms: float
    attempt_count: int
    http_status: int

    @property
    def ok(self) -> bool:
        return self.text is not None

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "text": self.text,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
            "http_status": self.http_status,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RawResponse":
        return cls(
            request_id=obj["request_id"],
            text=obj["text"],
            latency_ms=obj["latency_ms"],
            attempt_count=obj["attempt_count"],
            http_status=obj["http_status"],
        )


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with full jitter.

    The jitter draws uniformly below a deterministic, non-decreasing delay
    envelope ``base_delay * factor**(n-1)`` capped at ``max_delay``; the
    envelope, not the jittered draw, is what monotonicity guarantees apply to.
    """

    max_attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0
    max_delay: float = 30.0
    jitter: bool = True

    def envelope(self, failed_attempts: int) -> float:
        """Upper bound on the sleep after the n-th failed attempt (n >= 1)."""
        return min(self.max_delay, self.base_delay * self.factor ** (failed_attempts - 1))

    def delay(self, failed_attempts: int, rng: Callable[[], float] = random.random) -> float:
        cap = self.envelope(failed_attempts)
        return rng() * cap if self.jitter else cap


@dataclass(frozen=True)
class TransportResult:
    status: int
    text: str | None = None


# A transport takes the provider-agnostic envelope and returns a TransportResult,
# raising TransportTimeout/TransportError for socket-level failures.
Transport = Callable[[dict], TransportResult]

_RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class TokenBucket:
    """Thread-safe token-bucket rate limiter.

    ``rate`` tokens accrue per second up to ``capacity``; ``acquire`` blocks
    until a token is available. In any window of length T, at most
    ceil(rate*T) + capacity permits can be granted.
    """

    def __init__(
        self,
        rate: float,
        capacity: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0 or capacity < 1:
            raise ValueError("rate must be > 0 and capacity >= 1")
        self._rate = float(rate)
        self._capacity = float(capacity)
        self._tokens = float(capacity)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    @classmethod
    def per_minute(cls, rpm: float, capacity: int = 1, **kwargs) -> "TokenBucket":
        return cls(rpm / 60.0, capacity, **kwargs)

    def _refill_locked(self) -> None:
        now = self._clock()
        self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
        self._last = now

    def acquire(self) -> None:
        # The epsilon guards against a float stall where tokens converge to
        # just under 1.0 and the remaining wait underflows the clock.
        while True:
            with self._lock:
                self._refill_locked()
                if self._tokens >= 1.0 - 1e-9:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(max(wait, 1e-4))


def build_envelope(req: GenerationRequest) -> dict:
    """Provider-agnostic request payload; the image rides as base64."""
    image_b64 = base64.b64encode(Path(req.image_ref).read_bytes()).decode("ascii")
    return {
        "request_id": req.request_id,
        "model": req.model_name,
        "prompt": req.prompt_text,
        "image_b64": image_b64,
    }


def _fail(exc_type: type[Exception], message: str, attempts: int) -> Exception:
    exc = exc_type(message)
    exc.attempts = attempts  # type: ignore[attr-defined]
    return exc


def send_envelope(
    request_id: str,
    envelope: dict,
    policy: RetryPolicy,
    transport: Transport,
    limiter: TokenBucket | None = None,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
    rng: Callable[[], float] = random.random,
) -> RawResponse:
    """Send one envelope with retry-on-transient semantics.

    429/5xx/timeouts back off and retry up to ``policy.max_attempts``;
    401/403 raise AuthError immediately; other client errors raise
    TransportError. The envelope is idempotent by ``request_id``, so a retry
    re-sends identical bytes.
    """
    start = clock()
    attempts = 0
    while True:
        attempts += 1
        if limiter is not None:
            limiter.acquire()
        transient: str | None = None
        try:
            result = transport(envelope)
        except TransportTimeout as exc:
            transient = f"timeout: {exc}"
        else:
            status = result.status
            if 200 <= status < 300:
                return RawResponse(
                    request_id=request_id,
                    text=result.text,
                    latency_ms=(clock() - start) * 1000.0,
                    attempt_count=attempts,
                    http_status=status,
                )
            if status in (401, 403):
                raise _fail(AuthError, f"HTTP {status} for request {request_id}", attempts)
            if status in _RETRYABLE_STATUS:
                transient = f"HTTP {status}"
            else:
                raise _fail(TransportError, f"HTTP {status} for request {request_id}", attempts)
        if attempts >= policy.max_attempts:
            raise _fail(
                RateLimitedExhausted,
                f"request {request_id} failed after {attempts} attempts ({transient})",
                attempts,
            )
        sleep(policy.delay(attempts, rng))


def call_model(
    req: GenerationRequest,
    policy: RetryPolicy,
    transport: Transport,
    limiter: TokenBucket | None = None,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
    rng: Callable[[], float] = random.random,
) -> RawResponse:
    """Build the request's envelope and send it (see ``send_envelope``)."""
    return send_envelope(
        req.request_id, build_envelope(req), policy, transport, limiter, sleep, clock, rng
    )


class HttpTransport:
    """Adapter from the request envelope onto a Gemini-style JSON endpoint.

    POSTs ``{endpoint}/v1beta/models/{model}:generateContent`` with the prompt
    and inline image; any other provider only needs a different adapter.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout_s: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout_s = timeout_s

    def __call__(self, envelope: dict) -> TransportResult:
        import requests

        url = f"{self.endpoint}/v1beta/models/{envelope['model']}:generateContent"
        body = {
            "contents": [
                {
                    "parts": [
                        {"text": envelope["prompt"]},
                        {"inline_data": {"mime_type": "image/png", "data": envelope["image_b64"]}},
                    ]
                }
            ]
        }
        try:
            resp = requests.post(
                url,
                json=body,
                headers={"x-goog-api-key": self.api_key},
                timeout=self.timeout_s,
            )
        except requests.Timeout as exc:
            raise TransportTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            return TransportResult(status=resp.status_code)
        try:
            data = resp.json()
            text = data["candidates"][0]["content"]["parts"][0]["text"]
        except (ValueError, LookupError, TypeError) as exc:
            raise TransportError(f"malformed response body: {exc}") from exc
        return TransportResult(status=200, text=text)


class ReplayTransport:
    """Serve previously recorded responses by request_id.

    Lets the whole generation stage re-run deterministically from a transcript
    with no credentials and no network.
    """

    def __init__(self, entries: Iterable[Mapping]):
        self._by_id: dict[str, Mapping] = {}
        for entry in entries:
            self._by_id[entry["request"]["request_id"]] = entry

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayTransport":
        return cls(read_jsonl(path))

    def __call__(self, envelope: dict) -> TransportResult:
        entry = self._by_id.get(envelope["request_id"])
        if entry is None:
            return TransportResult(status=404)
        resp = entry["response"]
        return TransportResult(status=resp["http_status"], text=resp["text"])


def transcript_entry(req: GenerationRequest, resp: RawResponse, timestamp: str) -> dict:
    """One transcript line pairing a request with its response."""
    return {
        "request": {
            "request_id": req.request_id,
            "chart_id": req.chart_id,
            "task_kind": req.task_kind.value,
            "model_name": req.model_name,
            "image_ref": req.image_ref,
            "template_version": template_version(req.task_kind),
        },
        "response": resp.to_json(),
        "timestamp": timestamp,
    }


def run_generation(
    requests_: Iterable[GenerationRequest],
    policy: RetryPolicy,
    transport: Transport,
    limiter: TokenBucket | None = None,
    concurrency: int = 4,
    timestamp: str = "",
) -> list[dict]:
    """Dispatch requests through a bounded pool; returns transcript entries.

    Failed requests (auth/transport/exhausted) are recorded with a null text
    so that the transcript is a complete audit of the run.
    """
    reqs = list(requests_)

    def one(req: GenerationRequest) -> dict:
        try:
            resp = call_model(req, policy, transport, limiter=limiter)
        except (AuthError, TransportError, RateLimitedExhausted) as exc:
            resp = RawResponse(req.request_id, None, 0.0, getattr(exc, "attempts", 1), 0)
            entry = transcript_entry(req, resp, timestamp)
            entry["error"] = f"{type(exc).__name__}: {exc}"
            return entry
        return transcript_entry(req, resp, timestamp)

    if concurrency <= 1:
        entries = [one(r) for r in reqs]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=concurrency) as pool:
            entries = list(pool.map(one, reqs))
    entries.sort(key=lambda e: (e["request"]["chart_id"], e["request"]["task_kind"]))
    return entries


def write_transcript(path: str | Path, entries: Iterable[dict]) -> int:
    with open(path, "w", encoding="utf-8") as f:
        n = 0
        for entry in entries:
            f.write(dumps_line(entry))
            f.write("\n")
            n += 1
    return n
