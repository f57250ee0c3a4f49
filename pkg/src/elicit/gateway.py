"""The single seam between the engine and a chat/embedding provider.

Structured outputs are obtained by embedding the JSON schema of a pydantic
model in the system text and validating the returned body ourselves; no
provider-side schema enforcement is assumed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Sequence, TypeVar

import httpx
from pydantic import BaseModel, ConfigDict, Field, SecretStr, ValidationError, field_validator

from .errors import (
    AuthRejected,
    DimensionMismatch,
    ProviderError,
    ProviderUnreachable,
    SchemaExhausted,
    ValidationFailure,
)
from .models import EmbeddingVector

logger = logging.getLogger(__name__)

API_KEY_ENV = "ELICIT_API_KEY"

M = TypeVar("M", bound=BaseModel)
T = TypeVar("T")
U = TypeVar("U")


class ProviderConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_url: str = "https://api.openai.com/v1"
    api_key: SecretStr = SecretStr("")
    chat_model: str = "gpt-4-turbo"
    embedding_model: str = "text-embedding-ada-002"
    temperature: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    max_output_tokens: int = Field(default=4096, ge=1)
    request_timeout: float = Field(default=120.0, gt=0.0)

    @field_validator("base_url")
    @classmethod
    def _url(cls, v: str) -> str:
        url = httpx.URL(v)
        if url.scheme not in ("http", "https") or not url.host:
            raise ValueError(f"base_url must be an http(s) URL, got {v!r}")
        return v.rstrip("/")

    def resolved_api_key(self) -> str:
        return self.api_key.get_secret_value() or os.environ.get(API_KEY_ENV, "")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    on_schema_violation: str = "reprompt_with_error"
    backoff: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValidationFailure("max_attempts must be >= 1")
        if self.on_schema_violation not in ("reprompt_with_error", "fail"):
            raise ValidationFailure(f"unknown on_schema_violation {self.on_schema_violation!r}")
        if any(b < 0 for b in self.backoff):
            raise ValidationFailure("backoff durations must be nonnegative")


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValidationFailure("token counts must be nonnegative")

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)

    @classmethod
    def total(cls, usages: Iterable[TokenUsage]) -> TokenUsage:
        out = cls()
        for u in usages:
            out = out + u
        return out


@dataclass(frozen=True)
class Completion:
    text: str
    usage: TokenUsage
    truncated: bool = False


@dataclass(frozen=True)
class ChatExchange:
    system_text: str
    user_turns: tuple[str, ...]
    response_schema: dict[str, Any]
    raw_response: str
    usage: TokenUsage
    attempts: int
    key: str = ""


class Provider(Protocol):
    provider_id: str

    def complete(
        self,
        messages: list[dict[str, str]],
        *,
        config: ProviderConfig,
        temperature: float,
        schema: dict[str, Any],
        key: str,
        attempt: int,
    ) -> Completion: ...

    def embed(self, texts: list[str], *, config: ProviderConfig) -> tuple[list[list[float]], TokenUsage]: ...


# -- call ledger -----------------------------------------------------------------


@dataclass
class CallLedger:
    """Thread-safe record of every provider exchange.

    Entries carry the caller-supplied request key so a stage can emit them
    in a deterministic order regardless of completion order.
    """

    entries: list[dict[str, Any]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, entry: dict[str, Any]) -> None:
        with self._lock:
            self.entries.append(entry)

    def drain(self) -> list[dict[str, Any]]:
        with self._lock:
            out, self.entries = self.entries, []
        return sorted(out, key=lambda e: e["key"])

    def total_usage(self) -> TokenUsage:
        with self._lock:
            return TokenUsage.total(
                TokenUsage(e["input_tokens"], e["output_tokens"]) for e in self.entries
            )


def prompt_hash(messages: Sequence[dict[str, str]]) -> str:
    blob = json.dumps(list(messages), ensure_ascii=False, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# -- structured output -----------------------------------------------------------

_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S | re.I)

SCHEMA_INSTRUCTION = (
    "Respond with a single JSON object and nothing else. "
    "It must validate against this JSON schema:\n{schema}"
)


def json_schema(model: type[BaseModel]) -> dict[str, Any]:
    return model.model_json_schema()


def parse_structured(model: type[M], raw: str) -> M:
    text = raw.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1)
    return model.model_validate_json(text)


def _error_text(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
    return str(exc)


class Gateway:
    """Provider handle shared by all stages.

    ``max_in_flight`` bounds concurrent calls issued through :meth:`map`.
    """

    def __init__(
        self,
        provider: Provider,
        config: ProviderConfig | None = None,
        policy: RetryPolicy | None = None,
        *,
        max_in_flight: int = 4,
        ledger: CallLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_in_flight < 1:
            raise ValidationFailure("max_in_flight must be >= 1")
        self.provider = provider
        self.config = config or ProviderConfig()
        self.policy = policy or RetryPolicy()
        self.max_in_flight = max_in_flight
        self.ledger = ledger if ledger is not None else CallLedger()
        self._sleep = sleep

    @property
    def provider_id(self) -> str:
        return self.provider.provider_id

    def _with_backoff(self, fn: Callable[[], T]) -> T:
        delays = list(self.policy.backoff)
        while True:
            try:
                return fn()
            except ProviderUnreachable:
                if not delays:
                    raise
                delay = delays.pop(0)
                logger.warning("provider unreachable, retrying in %.1fs", delay)
                self._sleep(delay)

    def chat_structured(
        self,
        system_text: str,
        user_turns: Sequence[str],
        schema: type[M],
        *,
        temperature: float | None = None,
        key: str = "",
    ) -> tuple[M, ChatExchange]:
        if not user_turns:
            raise ValidationFailure("user_turns must be non-empty")
        schema_dict = json_schema(schema)
        full_system = (
            f"{system_text}\n\n{SCHEMA_INSTRUCTION.format(schema=json.dumps(schema_dict, indent=2))}"
        )
        turns = list(user_turns)
        temp = self.config.temperature if temperature is None else temperature
        usage = TokenUsage()
        raw = ""
        for attempt in range(1, self.policy.max_attempts + 1):
            messages = [{"role": "system", "content": full_system}]
            messages += [{"role": "user", "content": t} for t in turns]
            completion = self._with_backoff(
                lambda: self.provider.complete(
                    messages,
                    config=self.config,
                    temperature=temp,
                    schema=schema_dict,
                    key=key,
                    attempt=attempt,
                )
            )
            usage = usage + completion.usage
            raw = completion.text
            try:
                if completion.truncated:
                    raise ValueError(
                        f"output truncated at max_output_tokens={self.config.max_output_tokens}"
                    )
                record = parse_structured(schema, raw)
            except (ValidationError, ValueError) as exc:
                err = _error_text(exc)
                logger.warning("schema violation for %s (attempt %d/%d): %s",
                               schema.__name__, attempt, self.policy.max_attempts, err)
                if self.policy.on_schema_violation == "fail":
                    attempt_count = attempt
                    break
                turns.append(
                    "Your previous reply was rejected by the schema validator: "
                    f"{err}\nPrevious reply:\n{raw[:2000]}\n"
                    "Return only a corrected JSON object."
                )
                attempt_count = attempt
                continue
            exchange = ChatExchange(
                system_text=full_system,
                user_turns=tuple(turns),
                response_schema=schema_dict,
                raw_response=raw,
                usage=usage,
                attempts=attempt,
                key=key,
            )
            self._log(exchange, schema.__name__, messages, ok=True)
            return record, exchange
        exchange = ChatExchange(full_system, tuple(turns), schema_dict, raw, usage, attempt_count, key)
        self._log(exchange, schema.__name__, messages, ok=False)
        raise SchemaExhausted(
            f"{schema.__name__}: no valid output after {attempt_count} attempt(s)",
            raw_response=raw,
            attempts=attempt_count,
        )

    def _log(self, ex: ChatExchange, schema_name: str, messages: list[dict[str, str]], *, ok: bool) -> None:
        self.ledger.record(
            {
                "key": ex.key,
                "kind": "chat",
                "schema": schema_name,
                "prompt_sha256": prompt_hash(messages),
                "attempts": ex.attempts,
                "input_tokens": ex.usage.input_tokens,
                "output_tokens": ex.usage.output_tokens,
                "ok": ok,
            }
        )

    def embed(self, texts: Sequence[str], *, key: str = "") -> list[EmbeddingVector]:
        texts = list(texts)
        if not texts:
            raise ValidationFailure("embed() needs at least one text")
        if any(not t or not t.strip() for t in texts):
            raise ValidationFailure("embed() texts must be non-empty")
        rows, usage = self._with_backoff(lambda: self.provider.embed(texts, config=self.config))
        if len(rows) != len(texts):
            raise DimensionMismatch(f"provider returned {len(rows)} vectors for {len(texts)} texts")
        dims = {len(r) for r in rows}
        if len(dims) != 1:
            raise DimensionMismatch(f"provider returned ragged vectors with dims {sorted(dims)}")
        self.ledger.record(
            {
                "key": key,
                "kind": "embed",
                "schema": None,
                "prompt_sha256": prompt_hash([{"role": "embed", "content": t} for t in texts]),
                "attempts": 1,
                "input_tokens": usage.input_tokens,
                "output_tokens": usage.output_tokens,
                "ok": True,
            }
        )
        return [EmbeddingVector.of(r) for r in rows]

    def map(self, fn: Callable[[T], U], items: Sequence[T]) -> list[U]:
        """Apply ``fn`` concurrently; results come back in input order.

        Exceptions propagate after all submitted work has settled.
        """
        items = list(items)
        if self.max_in_flight == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            futures = [pool.submit(fn, x) for x in items]
            return [f.result() for f in futures]

    def map_settled(self, fn: Callable[[T], U], items: Sequence[T]) -> list[U | BaseException]:
        """Like :meth:`map` but returns exceptions in place of failed results."""

        def guarded(x: T) -> U | BaseException:
            try:
                return fn(x)
            except Exception as exc:  # noqa: BLE001
                return exc

        return self.map(guarded, items)


# -- OpenAI-compatible HTTP provider ---------------------------------------------


class HttpProvider:
    """Chat-completions and embeddings over the OpenAI-compatible REST shape."""

    def __init__(self, config: ProviderConfig, *, transport: httpx.BaseTransport | None = None) -> None:
        self.provider_id = f"http:{config.base_url}#{config.chat_model}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.request_timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict[str, Any], config: ProviderConfig) -> dict[str, Any]:
        headers = {"Authorization": f"Bearer {config.resolved_api_key()}"}
        try:
            resp = self._client.post(path, json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise ProviderUnreachable(f"timeout calling {path}: {exc}") from exc
        except httpx.TransportError as exc:
            raise ProviderUnreachable(f"cannot reach provider at {path}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthRejected(f"{path}: HTTP {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderUnreachable(f"{path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"{path}: HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError(f"{path}: response is not JSON") from exc

    def complete(self, messages, *, config, temperature, schema, key, attempt) -> Completion:
        body = self._post(
            "/chat/completions",
            {
                "model": config.chat_model,
                "messages": messages,
                "temperature": temperature,
                "max_tokens": config.max_output_tokens,
            },
            config,
        )
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("malformed chat-completions response") from exc
        u = body.get("usage") or {}
        usage = TokenUsage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
        return Completion(text, usage, truncated=choice.get("finish_reason") == "length")

    def embed(self, texts, *, config) -> tuple[list[list[float]], TokenUsage]:
        body = self._post("/embeddings", {"model": config.embedding_model, "input": texts}, config)
        try:
            data = sorted(body["data"], key=lambda d: d["index"])
            rows = [[float(x) for x in d["embedding"]] for d in data]
        except (KeyError, TypeError) as exc:
            raise ProviderError("malformed embeddings response") from exc
        u = body.get("usage") or {}
        return rows, TokenUsage(int(u.get("prompt_tokens", 0)), 0)
