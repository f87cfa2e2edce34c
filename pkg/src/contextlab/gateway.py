"""Uniform access to chat, embedding, sentiment, and summarization providers.

Every call is canonicalized, hashed, and written to an append-only ledger, so
any run can be replayed byte-for-byte without network access.  Four modes:

- ``mock``:   scripted in-process provider (deterministic), ledger written
- ``live``:   HTTP provider, every call executed, ledger written
- ``record``: HTTP provider, calls already in the ledger are reused
- ``replay``: ledger only; an unrecorded request is an error

Embedding vectors are L2-normalized here, once, so downstream cosine
similarity reduces to a dot product.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import requests


class GatewayError(Exception):
    """Base for provider/gateway failures."""


class ConfigurationError(GatewayError):
    """Bad provider configuration: missing credential, missing ledger, unknown mode."""


class ProviderError(GatewayError):
    """Upstream provider failure."""

    retryable = False


class TransportError(ProviderError):
    retryable = True


class RateLimitError(ProviderError):
    retryable = True


class ContextWindowError(ProviderError):
    """Request exceeds the provider context window; never retried."""

    def __init__(self, message: str, token_estimate: int):
        super().__init__(f"{message} (approx. {token_estimate} tokens)")
        self.token_estimate = token_estimate


class EmptyCompletionError(ProviderError):
    pass


class ProviderResponseError(ProviderError):
    """Provider returned a payload that violates a gateway invariant."""


class UnrecordedRequestError(GatewayError):
    """Replay mode was asked for a request digest the ledger does not contain."""


ROLES = ("system", "assistant", "user")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"invalid role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be nonempty")


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    model_id: str
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def validate(self) -> None:
        if not self.messages:
            raise ValueError("completion request needs at least one message")
        if self.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class SentimentResult:
    label: str  # positive | negative
    confidence: float


@dataclass(frozen=True)
class ProviderCallRecord:
    digest: str
    capability: str
    request: dict
    response: str
    provider_id: str
    timestamp: str


def canonical_json(obj) -> str:
    """Key-sorted, whitespace-free JSON; the only serialization digests see."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def request_digest(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def chat_payload(req: CompletionRequest) -> dict:
    return {
        "capability": "chat",
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "model": req.model_id,
        "temperature": req.temperature,
        "max_output_tokens": req.max_output_tokens,
    }


def estimate_tokens(text: str) -> int:
    # rough 4-chars-per-token heuristic, used only for error reporting
    return max(1, len(text) // 4)


@dataclass(frozen=True)
class ProviderSpec:
    """Provider configuration; credentials come from the environment, never the file."""

    mode: str = "mock"
    chat_url: str = ""
    embed_url: str = ""
    sentiment_url: str = ""
    summarize_url: str = ""
    chat_model: str = "gpt-4"
    embed_model: str = "sentence-embedder"
    sentiment_model: str = "sst2-binary"
    summarize_model: str = "bart-cnn"
    temperature: float = 0.0
    max_output_tokens: int = 1024
    ledger_path: str = ""
    max_in_flight: int = 4
    chat_key_env: str = "CONTEXTLAB_CHAT_KEY"
    infer_key_env: str = "CONTEXTLAB_INFER_KEY"

    def digest(self) -> str:
        """Hash of the call-shaping fields only; mode, paths, and keys excluded."""
        return request_digest(
            {
                "chat_model": self.chat_model,
                "embed_model": self.embed_model,
                "sentiment_model": self.sentiment_model,
                "summarize_model": self.summarize_model,
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
            }
        )


# --- ledger -----------------------------------------------------------------


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def read_ledger(path: str | Path) -> tuple[dict | None, list[ProviderCallRecord]]:
    """Return (manifest, call records in file order); tolerates absent manifest."""
    manifest = None
    records: list[ProviderCallRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.get("kind", "call")
            if kind == "manifest":
                if manifest is None:
                    manifest = obj
            elif kind == "call":
                records.append(
                    ProviderCallRecord(
                        digest=obj["digest"],
                        capability=obj["capability"],
                        request=obj["request"],
                        response=obj["response"],
                        provider_id=obj["provider_id"],
                        timestamp=obj["timestamp"],
                    )
                )
            # other kinds (e.g. grade records) are not the gateway's business
    return manifest, records


class LedgerWriter:
    """Append-only line writer; a single lock serializes concurrent appends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = open(self.path, "a", encoding="utf-8")

    def write_obj(self, obj: dict) -> None:
        line = json.dumps(obj, ensure_ascii=False) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def write_manifest(self, manifest: dict) -> None:
        self.write_obj({"kind": "manifest", **manifest})

    def write_call(self, rec: ProviderCallRecord) -> None:
        self.write_obj(
            {
                "kind": "call",
                "digest": rec.digest,
                "capability": rec.capability,
                "request": rec.request,
                "response": rec.response,
                "provider_id": rec.provider_id,
                "timestamp": rec.timestamp,
            }
        )

    def close(self) -> None:
        with self._lock:
            self._fh.close()


# --- providers ----------------------------------------------------------------

POSITIVE_WORDS = frozenset(
    "excellent good great correct helpful insightful accurate clear right brilliant".split()
)
NEGATIVE_WORDS = frozenset("wrong incorrect bad poor misleading confusing".split())

JUDGE_MARKER = "single JSON object"


class MockProvider:
    """Deterministic scripted provider.

    Scripts are keyed by request digest (chat/summarize) or raw text
    (embed/sentiment/summaries); anything unscripted falls back to a
    deterministic default derived from the request content.
    """

    provider_id = "mock"

    def __init__(
        self,
        chat_responses: dict[str, str] | None = None,
        chat_fn=None,
        embeddings: dict[str, list[float]] | None = None,
        embed_dim: int = 32,
        sentiments: dict[str, tuple[str, float]] | None = None,
        summaries: dict[str, str] | None = None,
        summarize_fn=None,
        fail_digests: set[str] | None = None,
    ):
        self.chat_responses = dict(chat_responses or {})
        self.chat_fn = chat_fn
        self.embeddings = dict(embeddings or {})
        self.embed_dim = embed_dim
        self.sentiments = dict(sentiments or {})
        self.summaries = dict(summaries or {})
        self.summarize_fn = summarize_fn
        self.fail_digests = set(fail_digests or ())

    def _check_fail(self, digest: str) -> None:
        if digest in self.fail_digests:
            raise TransportError(f"scripted failure for digest {digest[:12]}")

    def chat(self, payload: dict, digest: str) -> str:
        self._check_fail(digest)
        if digest in self.chat_responses:
            return self.chat_responses[digest]
        if self.chat_fn is not None:
            return self.chat_fn(payload, digest)
        last = payload["messages"][-1]["content"]
        if JUDGE_MARKER in last:
            h = int(digest[:8], 16)
            counts = {
                "completeness": 1 + h % 3,
                "logical_inconsistencies": (h >> 2) % 2,
                "minor_errors": (h >> 4) % 3,
                "incorrect_statements": (h >> 6) % 3,
            }
            return "Assessment follows.\n" + json.dumps(counts)
        return f"mock-response-{digest[:12]}"

    def embed(self, text: str, digest: str) -> list[float]:
        self._check_fail(digest)
        if text in self.embeddings:
            return list(self.embeddings[text])
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = random.Random(seed)
        return [rng.uniform(-1.0, 1.0) for _ in range(self.embed_dim)]

    def sentiment(self, text: str, digest: str) -> tuple[str, float]:
        self._check_fail(digest)
        if text in self.sentiments:
            return self.sentiments[text]
        words = {w.strip(".,!?;:\"'()").lower() for w in text.split()}
        if words & NEGATIVE_WORDS:
            return ("negative", 0.95)
        if words & POSITIVE_WORDS:
            return ("positive", 0.95)
        return ("negative", 0.6)

    def summarize(self, text: str, max_chars: int, digest: str) -> str:
        self._check_fail(digest)
        if text in self.summaries:
            return self.summaries[text]
        if self.summarize_fn is not None:
            return self.summarize_fn(text, max_chars)
        return text if len(text) <= max_chars else text[:max_chars]


class LiveProvider:
    """HTTP provider: OpenAI-shaped chat/embedding endpoints, HF-shaped inference."""

    def __init__(self, spec: ProviderSpec, timeout: float = 60.0):
        self.spec = spec
        self.timeout = timeout
        self.provider_id = f"live:{spec.chat_model}"
        self._chat_key = os.environ.get(spec.chat_key_env, "")
        self._infer_key = os.environ.get(spec.infer_key_env, "")
        if not self._chat_key:
            raise ConfigurationError(
                f"{spec.mode} mode requires the {spec.chat_key_env} environment variable"
            )
        if not self._infer_key:
            raise ConfigurationError(
                f"{spec.mode} mode requires the {spec.infer_key_env} environment variable"
            )

    def _post(self, url: str, key: str, body: dict) -> dict | list:
        if not url:
            raise ConfigurationError("provider endpoint URL not configured")
        try:
            resp = requests.post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimitError("rate limited (HTTP 429)")
        if resp.status_code >= 500:
            raise TransportError(f"server error (HTTP {resp.status_code})")
        if resp.status_code >= 400:
            text = resp.text[:500]
            if "context" in text.lower() or "token" in text.lower():
                raise ContextWindowError(
                    "request exceeds context window",
                    estimate_tokens(json.dumps(body)),
                )
            raise ProviderError(f"provider rejected request (HTTP {resp.status_code}): {text}")
        return resp.json()

    def chat(self, payload: dict, digest: str) -> str:
        body = {
            "model": payload["model"],
            "messages": payload["messages"],
            "temperature": payload["temperature"],
            "max_tokens": payload["max_output_tokens"],
        }
        data = self._post(self.spec.chat_url, self._chat_key, body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderResponseError(f"unexpected chat payload: {exc}") from exc

    def embed(self, text: str, digest: str) -> list[float]:
        body = {"model": self.spec.embed_model, "input": text}
        data = self._post(self.spec.embed_url, self._infer_key, body)
        try:
            return list(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderResponseError(f"unexpected embedding payload: {exc}") from exc

    def sentiment(self, text: str, digest: str) -> tuple[str, float]:
        data = self._post(self.spec.sentiment_url, self._infer_key, {"inputs": text})
        try:
            scores = data[0] if isinstance(data[0], list) else data
            best = max(scores, key=lambda s: s["score"])
            return (best["label"].lower(), float(best["score"]))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderResponseError(f"unexpected sentiment payload: {exc}") from exc

    def summarize(self, text: str, max_chars: int, digest: str) -> str:
        body = {"inputs": text, "parameters": {"max_length": max_chars}}
        data = self._post(self.spec.summarize_url, self._infer_key, body)
        try:
            return data[0]["summary_text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderResponseError(f"unexpected summary payload: {exc}") from exc


# --- gateway --------------------------------------------------------------------


class Gateway:
    """Mode-aware front door for the four provider capabilities."""

    RETRY_ATTEMPTS = 3
    RETRY_BASE_SECONDS = 1.0

    def __init__(
        self,
        spec: ProviderSpec,
        provider=None,
        ledger_in: str | Path | None = None,
        ledger_out: str | Path | None = None,
        sleep_fn=time.sleep,
    ):
        self.spec = spec
        self.mode = spec.mode
        self.provider = provider
        self._sleep = sleep_fn
        self._lock = threading.Lock()
        self._embed_dim: int | None = None
        self._cache: dict[str, ProviderCallRecord] = {}
        self._source_order: list[ProviderCallRecord] = []
        self._source_manifest: dict | None = None
        self._used: set[str] = set()
        self._written: set[str] = set()
        self._writer: LedgerWriter | None = None
        self._replay_out: Path | None = None
        self._pending_manifest: dict | None = None

        if ledger_in is not None and Path(ledger_in).exists():
            self._source_manifest, self._source_order = read_ledger(ledger_in)
            self._cache = {rec.digest: rec for rec in self._source_order}
        elif self.mode == "replay":
            raise ConfigurationError(f"replay mode requires an existing ledger ({ledger_in})")

        if self.mode == "live":
            self._cache = {}  # live calls are always executed, never reused

        if ledger_out is not None:
            if self.mode == "replay":
                # written on close, in source order, so replay output is deterministic
                self._replay_out = Path(ledger_out)
            else:
                self._writer = LedgerWriter(ledger_out)
                if ledger_in is not None and Path(ledger_in) == Path(ledger_out):
                    # resuming in place: everything already in the file stays put
                    self._written = set(self._cache)

    # -- manifest plumbing ------------------------------------------------

    def set_manifest(self, manifest: dict) -> None:
        """Stage the run manifest; it is written before the first record."""
        if self.mode == "replay":
            self._pending_manifest = self._source_manifest or {"kind": "manifest", **manifest}
        else:
            if self._writer is not None and self._writer.path.stat().st_size == 0:
                self._writer.write_manifest(manifest)

    def source_manifest(self) -> dict | None:
        return self._source_manifest

    # -- core call path -----------------------------------------------------

    def _record(self, payload: dict, digest: str, response: str) -> None:
        rec = ProviderCallRecord(
            digest=digest,
            capability=payload["capability"],
            request=payload,
            response=response,
            provider_id=getattr(self.provider, "provider_id", self.mode),
            timestamp=_utcnow(),
        )
        self._store(rec)

    def _store(self, rec: ProviderCallRecord) -> None:
        with self._lock:
            self._cache[rec.digest] = rec
            already = rec.digest in self._written
            self._written.add(rec.digest)
        if self._writer is not None and not already:
            self._writer.write_call(rec)

    def _call(self, payload: dict, invoke) -> str:
        digest = request_digest(payload)
        if self.mode == "replay":
            with self._lock:
                rec = self._cache.get(digest)
                if rec is None:
                    raise UnrecordedRequestError(
                        f"no recorded response for {payload['capability']} request {digest[:12]}"
                    )
                self._used.add(digest)
            return rec.response
        if self.mode in ("record", "mock"):
            with self._lock:
                rec = self._cache.get(digest)
            if rec is not None:
                self._store(rec)  # carry reused records into the output ledger
                return rec.response
        response = self._invoke_with_retry(payload, digest, invoke)
        self._record(payload, digest, response)
        return response

    def _invoke_with_retry(self, payload: dict, digest: str, invoke) -> str:
        if self.provider is None:
            raise ConfigurationError(f"no provider configured for mode {self.mode!r}")
        delay = self.RETRY_BASE_SECONDS
        for attempt in range(1, self.RETRY_ATTEMPTS + 1):
            try:
                return invoke(payload, digest)
            except ProviderError as exc:
                if not exc.retryable or attempt == self.RETRY_ATTEMPTS:
                    raise
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    # -- capabilities ----------------------------------------------------------

    def chat(self, req: CompletionRequest) -> str:
        req.validate()
        payload = chat_payload(req)

        def invoke(p, d):
            return self.provider.chat(p, d)

        text = self._call(payload, invoke)
        if not text:
            raise EmptyCompletionError(f"empty completion for request {request_digest(payload)[:12]}")
        return text

    def embed(self, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        payload = {"capability": "embed", "model": self.spec.embed_model, "text": text}

        def invoke(p, d):
            return json.dumps(self.provider.embed(text, d))

        raw = self._call(payload, invoke)
        vec = [float(x) for x in json.loads(raw)]
        with self._lock:
            if self._embed_dim is None:
                self._embed_dim = len(vec)
            elif self._embed_dim != len(vec):
                raise ProviderResponseError(
                    f"embedding dimension changed mid-run: {self._embed_dim} -> {len(vec)}"
                )
        norm = math.sqrt(math.fsum(x * x for x in vec))
        if norm == 0.0:
            raise ProviderResponseError("provider returned a zero embedding vector")
        return [x / norm for x in vec]

    def sentiment(self, text: str) -> SentimentResult:
        if not text:
            raise ValueError("cannot classify empty text")
        payload = {"capability": "sentiment", "model": self.spec.sentiment_model, "text": text}

        def invoke(p, d):
            label, confidence = self.provider.sentiment(text, d)
            return json.dumps({"label": label, "confidence": confidence})

        obj = json.loads(self._call(payload, invoke))
        label, confidence = obj["label"], float(obj["confidence"])
        if label not in ("positive", "negative"):
            raise ProviderResponseError(f"invalid sentiment label {label!r}")
        if not 0.0 <= confidence <= 1.0:
            raise ProviderResponseError(f"sentiment confidence {confidence} outside [0,1]")
        return SentimentResult(label=label, confidence=confidence)

    def summarize(self, text: str, max_chars: int) -> str:
        if not text:
            raise ValueError("cannot summarize empty text")
        if max_chars < 16:
            raise ValueError(f"summary budget {max_chars} is degenerate (minimum 16)")
        payload = {
            "capability": "summarize",
            "model": self.spec.summarize_model,
            "text": text,
            "max_chars": max_chars,
        }

        def invoke(p, d):
            return self.provider.summarize(text, max_chars, d)

        result = self._call(payload, invoke)
        if not result:
            raise ProviderResponseError("summarizer returned empty text")
        if len(result) > max(max_chars, len(text)):
            raise ProviderResponseError(
                f"summary length {len(result)} exceeds budget {max_chars}"
            )
        return result

    # -- lifecycle ----------------------------------------------------------------

    def close(self) -> None:
        if self._replay_out is not None:
            manifest = self._pending_manifest or self._source_manifest
            with open(self._replay_out, "w", encoding="utf-8") as fh:
                if manifest is not None:
                    fh.write(json.dumps(manifest, ensure_ascii=False) + "\n")
                written = set()
                for rec in self._source_order:
                    if rec.digest in self._used and rec.digest not in written:
                        written.add(rec.digest)
                        fh.write(
                            json.dumps(
                                {
                                    "kind": "call",
                                    "digest": rec.digest,
                                    "capability": rec.capability,
                                    "request": rec.request,
                                    "response": rec.response,
                                    "provider_id": rec.provider_id,
                                    "timestamp": rec.timestamp,
                                },
                                ensure_ascii=False,
                            )
                            + "\n"
                        )
            self._replay_out = None
        if self._writer is not None:
            self._writer.close()
            self._writer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def configure_provider(
    spec: ProviderSpec,
    mock_provider: MockProvider | None = None,
    ledger_out: str | Path | None = None,
    sleep_fn=time.sleep,
) -> Gateway:
    """Build a Gateway for the spec's mode; replay mode never touches the network."""
    mode = spec.mode
    ledger_in = spec.ledger_path or None
    if ledger_out is None and mode != "replay":
        ledger_out = ledger_in
    if mode == "mock":
        provider = mock_provider or MockProvider()
    elif mode in ("live", "record"):
        provider = LiveProvider(spec)
    elif mode == "replay":
        if not ledger_in:
            raise ConfigurationError("replay mode requires provider.ledger to be set")
        provider = None
    else:
        raise ConfigurationError(f"unknown provider mode {mode!r}")
    return Gateway(spec, provider=provider, ledger_in=ledger_in, ledger_out=ledger_out, sleep_fn=sleep_fn)
