"""Text-generation gateway with record/replay and scripted providers.

All pipeline stages call one interface.  Requests are canonically
digested so a recorded run can be replayed byte-for-byte offline; a
replay miss is a hard error because it means the pipeline stopped being
deterministic.  Pipeline-issued requests carry a fixed sampling
temperature of 0.5, hard-coded in the request factory.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .canonical import digest_payload, normalize_text, write_text_atomic
from .errors import (
    ContextOverflowError,
    ParseError,
    ProviderError,
    ReplayMissError,
    UnknownStageError,
    ValidationError,
)

logger = logging.getLogger(__name__)

PIPELINE_TEMPERATURE = 0.5
GATEWAY_FIXTURE_SCHEMA = "gateway_fixture_v1"
SCRIPT_SCHEMA = "script_v1"
DEFAULT_MAX_INFLIGHT = 2
DEFAULT_CONTEXT_CHAR_WINDOW = 2_000_000
MESSAGE_ROLES = ("system", "user")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str

    def __post_init__(self):
        if self.role not in MESSAGE_ROLES:
            raise ValidationError(f"unknown message role {self.role!r}")
        if not self.text.strip():
            raise ValidationError(f"{self.role} message text must be nonempty")


@dataclass(frozen=True)
class GenerationRequest:
    """One generation call, canonically digestable for fixture keying."""

    messages: tuple[ChatMessage, ...]
    temperature: float
    model_id: str
    stage_label: str
    max_output_chars: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValidationError("request must carry at least one message")
        if not self.stage_label:
            raise ValidationError("request must carry a stage label")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError(
                f"temperature {self.temperature} outside the sane [0, 2] range"
            )

    @property
    def digest(self) -> str:
        return digest_payload(
            {
                "messages": [
                    {"role": m.role, "text": normalize_text(m.text)} for m in self.messages
                ],
                "temperature": self.temperature,
                "model_id": self.model_id,
                "stage_label": self.stage_label,
                "max_output_chars": self.max_output_chars,
            }
        )

    def total_chars(self) -> int:
        return sum(len(m.text) for m in self.messages)

    def combined_text(self) -> str:
        return "\n".join(m.text for m in self.messages)


def make_request(
    stage_label: str,
    messages: Sequence[ChatMessage],
    model_id: str,
    max_output_chars: int | None = None,
    experimental_temperature: float | None = None,
) -> GenerationRequest:
    """Build a pipeline request with the fixed sampling temperature.

    The only way to move off 0.5 is the explicit experimental override,
    which callers must surface as a taint marker in their artifacts.
    """
    temperature = (
        PIPELINE_TEMPERATURE if experimental_temperature is None else experimental_temperature
    )
    return GenerationRequest(
        messages=tuple(messages),
        temperature=temperature,
        model_id=model_id,
        stage_label=stage_label,
        max_output_chars=max_output_chars,
    )


@dataclass(frozen=True)
class ProviderTranscript:
    request_digest: str
    stage_label: str
    response_text: str
    latency_s: float
    tokens: dict | None = None

    def to_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "stage_label": self.stage_label,
            "response_text": self.response_text,
            "latency_s": self.latency_s,
            "tokens": self.tokens,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ProviderTranscript":
        return cls(
            request_digest=payload["request_digest"],
            stage_label=payload["stage_label"],
            response_text=payload["response_text"],
            latency_s=payload.get("latency_s", 0.0),
            tokens=payload.get("tokens"),
        )


class HttpProvider:
    """Live chat-completion endpoint (OpenAI-compatible shape)."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._session = session or requests.Session()
        self.last_tokens: dict | None = None

    def complete(self, request: GenerationRequest) -> str:
        body = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.text} for m in request.messages],
            "temperature": request.temperature,
        }
        if request.max_output_chars is not None:
            # crude chars->tokens bound; the provider may return less
            body["max_tokens"] = max(1, request.max_output_chars // 4)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._session.post(
                    url, json=body, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if response.status_code < 400:
                    return self._extract_text(response)
                if response.status_code < 500:
                    raise ProviderError(
                        f"provider rejected request (HTTP {response.status_code}): "
                        f"{response.text[:500]}"
                    )
                last_error = ProviderError(f"provider error (HTTP {response.status_code})")
            if attempt < self.max_retries:
                time.sleep(self.backoff_base * 2**attempt)
        raise ProviderError(f"generation failed after retries: {last_error}")

    def _extract_text(self, response) -> str:
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        self.last_tokens = payload.get("usage")
        if not isinstance(text, str):
            raise ProviderError("provider returned non-text content")
        return text


class ScriptedProvider:
    """Deterministic provider driven by a stage-label script table.

    A stage maps either to a static template or to an ordered list of
    content rules {"contains": ..., "text": ...}; the first rule whose
    marker(s) all appear somewhere in the request's messages wins
    ("contains" may be a string or a list of strings).  Templates may
    reference {stage_label} and {model_id}.
    """

    def __init__(self, stages: Mapping[str, str | list]):
        self.stages = dict(stages)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        with open(path, encoding="utf-8") as handle:
            try:
                doc = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid script file: {exc}") from exc
        if doc.get("schema") != SCRIPT_SCHEMA:
            raise ParseError(f"{path}: unsupported script schema {doc.get('schema')!r}")
        return cls(doc["stages"])

    def complete(self, request: GenerationRequest) -> str:
        entry = self.stages.get(request.stage_label)
        if entry is None:
            raise UnknownStageError(
                f"script has no entry for stage {request.stage_label!r} "
                f"(known: {sorted(self.stages)})"
            )
        if isinstance(entry, str):
            template = entry
        else:
            template = self._match_rule(entry, request)
        return template.replace("{stage_label}", request.stage_label).replace(
            "{model_id}", request.model_id
        )

    def _match_rule(self, rules: list, request: GenerationRequest) -> str:
        haystack = request.combined_text()
        for rule in rules:
            markers = rule["contains"]
            if isinstance(markers, str):
                markers = [markers]
            if all(marker in haystack for marker in markers):
                return rule["text"]
        raise UnknownStageError(
            f"no content rule matched for stage {request.stage_label!r}"
        )


class Gateway:
    """Mode-switched front door for all generation calls.

    Modes: "live" calls the provider; "record" calls it and appends
    every transcript to a fixture file; "replay" serves only recorded
    transcripts; "scripted" runs the deterministic script table.
    """

    def __init__(
        self,
        mode: str,
        provider=None,
        fixture_path: str | Path | None = None,
        fallback_by_stage: bool = False,
        max_context_chars: int = DEFAULT_CONTEXT_CHAR_WINDOW,
        allow_tail_truncation: bool = False,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
    ):
        if mode not in ("live", "record", "replay", "scripted"):
            raise ValidationError(f"unknown gateway mode {mode!r}")
        if mode in ("live", "record", "scripted") and provider is None:
            raise ValidationError(f"gateway mode {mode!r} requires a provider")
        if mode in ("record", "replay") and fixture_path is None:
            raise ValidationError(f"gateway mode {mode!r} requires a fixture path")
        self.mode = mode
        self.provider = provider
        self.fixture_path = Path(fixture_path) if fixture_path else None
        self.fallback_by_stage = fallback_by_stage
        self.max_context_chars = max_context_chars
        self.allow_tail_truncation = allow_tail_truncation
        self._limiter = threading.Semaphore(max_inflight)
        self._lock = threading.Lock()
        self.log: list[ProviderTranscript] = []
        self.requests: list[GenerationRequest] = []
        self._replay_entries: list[ProviderTranscript] = []
        self._replay_consumed: set[int] = set()
        if mode == "replay":
            self._replay_entries = load_gateway_fixture(self.fixture_path)
        if mode == "record":
            self._init_record_file()

    def _init_record_file(self) -> None:
        self.fixture_path.parent.mkdir(parents=True, exist_ok=True)
        if not self.fixture_path.exists():
            header = json.dumps({"schema": GATEWAY_FIXTURE_SCHEMA}, sort_keys=True)
            self.fixture_path.write_text(header + "\n", encoding="utf-8")

    def complete(self, request: GenerationRequest) -> str:
        with self._limiter:
            request = self._apply_context_policy(request)
            started = time.monotonic()
            if self.mode == "replay":
                transcript = self._replay_lookup(request)
            else:
                text = self.provider.complete(request)
                latency = time.monotonic() - started
                tokens = getattr(self.provider, "last_tokens", None)
                transcript = ProviderTranscript(
                    request_digest=request.digest,
                    stage_label=request.stage_label,
                    response_text=text,
                    latency_s=round(latency, 6),
                    tokens=tokens,
                )
                if self.mode == "record":
                    self._append_fixture(transcript)
            with self._lock:
                self.requests.append(request)
                self.log.append(transcript)
            return transcript.response_text

    def _apply_context_policy(self, request: GenerationRequest) -> GenerationRequest:
        total = request.total_chars()
        if total <= self.max_context_chars:
            return request
        if not self.allow_tail_truncation:
            raise ContextOverflowError(
                f"request context is {total} chars, window is {self.max_context_chars} "
                f"(stage {request.stage_label}); refusing to truncate silently"
            )
        overflow = total - self.max_context_chars
        logger.warning(
            "tail-truncating %d chars from stage %s context", overflow, request.stage_label
        )
        messages = list(request.messages)
        last = messages[-1]
        messages[-1] = ChatMessage(role=last.role, text=last.text[: -overflow or None])
        return GenerationRequest(
            messages=tuple(messages),
            temperature=request.temperature,
            model_id=request.model_id,
            stage_label=request.stage_label,
            max_output_chars=request.max_output_chars,
        )

    def _replay_lookup(self, request: GenerationRequest) -> ProviderTranscript:
        digest = request.digest
        with self._lock:
            for index, entry in enumerate(self._replay_entries):
                if index in self._replay_consumed:
                    continue
                if entry.request_digest == digest:
                    self._replay_consumed.add(index)
                    return entry
            if self.fallback_by_stage:
                for index, entry in enumerate(self._replay_entries):
                    if index in self._replay_consumed:
                        continue
                    if entry.stage_label == request.stage_label:
                        logger.warning(
                            "replay served stage %s by label fallback (digest changed)",
                            request.stage_label,
                        )
                        self._replay_consumed.add(index)
                        return entry
        raise ReplayMissError(
            f"no recorded response for stage {request.stage_label!r} "
            f"(request digest {digest}); the pipeline is no longer deterministic "
            f"with respect to {self.fixture_path}"
        )

    def _append_fixture(self, transcript: ProviderTranscript) -> None:
        line = json.dumps(transcript.to_dict(), sort_keys=True, ensure_ascii=False)
        with self._lock:
            with open(self.fixture_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()

    def call_count(self, stage_prefix: str = "") -> int:
        with self._lock:
            return sum(1 for t in self.log if t.stage_label.startswith(stage_prefix))

    def save_fixture(self, path: str | Path) -> Path:
        """Write the in-memory transcript log as a replayable fixture."""
        lines = [json.dumps({"schema": GATEWAY_FIXTURE_SCHEMA}, sort_keys=True)]
        with self._lock:
            lines.extend(
                json.dumps(t.to_dict(), sort_keys=True, ensure_ascii=False) for t in self.log
            )
        return write_text_atomic(path, "\n".join(lines) + "\n")


def load_gateway_fixture(path: str | Path) -> list[ProviderTranscript]:
    path = Path(path)
    if not path.exists():
        raise ReplayMissError(f"gateway fixture not found: {path}")
    entries: list[ProviderTranscript] = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{number}: invalid fixture line: {exc}") from exc
            if number == 1:
                if doc.get("schema") != GATEWAY_FIXTURE_SCHEMA:
                    raise ParseError(
                        f"{path}: unsupported fixture schema {doc.get('schema')!r}"
                    )
                continue
            entries.append(ProviderTranscript.from_dict(doc))
    return entries
