"""Chat-completion backends: live HTTP, scripted replay, and a recorder.

The wire shape (documented bit-exactly in docs/wire_format.md) is the
widespread chat-completions layout: a messages array whose entries carry a
role and a list of typed content parts. Scripted providers serialize
requests through the same code path as the live client, so recorded
requests are exactly what would have gone over the wire.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import requests

from .errors import ProviderError, ScriptExhausted
from .images import ImageTable
from .messages import (
    Message,
    ROLE_ASSISTANT,
    ROLE_SYSTEM,
    ROLE_TOOL_OUTPUT,
    ROLE_USER,
)

ENV_BASE_URL = "VISIONLOOP_BASE_URL"
ENV_API_KEY = "VISIONLOOP_API_KEY"
ENV_MODEL = "VISIONLOOP_MODEL"

DEFAULT_TIMEOUT_S = 120.0
DEFAULT_TRANSPORT_RETRIES = 1

# Internal roles map onto the two wire roles the schema understands for
# inbound content; executor output travels as a user turn.
_WIRE_ROLES = {
    ROLE_SYSTEM: "system",
    ROLE_USER: "user",
    ROLE_ASSISTANT: "assistant",
    ROLE_TOOL_OUTPUT: "user",
}


@dataclass
class Usage:
    """Accumulated token/time totals; always the sum over recorded calls."""

    input_tokens: int = 0
    output_tokens: int = 0
    subcall_count: int = 0
    wall_clock_s: float = 0.0

    def add_reply(self, reply: "ProviderReply", subcall: bool = False) -> None:
        self.input_tokens += reply.input_tokens
        self.output_tokens += reply.output_tokens
        self.wall_clock_s += reply.wall_clock_s
        if subcall:
            self.subcall_count += 1

    def as_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "subcall_count": self.subcall_count,
            "wall_clock_s": self.wall_clock_s,
        }


@dataclass(frozen=True)
class ProviderReply:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    wall_clock_s: float = 0.0

    def usage_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_clock_s": self.wall_clock_s,
        }


@dataclass(frozen=True)
class CannedResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    wall_clock_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "text": self.text,
            "usage": {
                "input_tokens": self.input_tokens,
                "output_tokens": self.output_tokens,
                "wall_clock_s": self.wall_clock_s,
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CannedResponse":
        usage = payload.get("usage", {})
        return cls(
            text=payload["text"],
            input_tokens=int(usage.get("input_tokens", 0)),
            output_tokens=int(usage.get("output_tokens", 0)),
            wall_clock_s=float(usage.get("wall_clock_s", 0.0)),
        )


class ProviderScript:
    """Ordered transcript of canned responses for deterministic replay."""

    def __init__(self, responses: Sequence[CannedResponse]):
        self.responses = list(responses)

    def as_dict(self) -> dict:
        return {"responses": [r.as_dict() for r in self.responses]}

    @classmethod
    def from_dict(cls, payload: dict) -> "ProviderScript":
        return cls([CannedResponse.from_dict(r) for r in payload["responses"]])

    @classmethod
    def load(cls, path: str) -> "ProviderScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)
            fh.write("\n")


def serialize_messages(
    messages: Sequence[Message],
    table: Optional[ImageTable],
    include_images: bool,
) -> list[dict]:
    """Render internal messages into the documented typed-parts schema.

    When include_images is false, image-bearing messages get a textual
    placeholder instead of payload bytes; the pixels stay reachable through
    the executor's context_images binding. This keeps every follow-up
    request text-only.
    """
    out = []
    for msg in messages:
        parts: list[dict] = [{"type": "text", "text": msg.text}]
        records = [table.get(i) for i in msg.image_indices] if table else []
        records += list(msg.image_sources)
        if records and include_images:
            for rec in records:
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": rec.as_url(), "detail": rec.detail},
                    }
                )
        elif records:
            parts.append(
                {
                    "type": "text",
                    "text": (
                        f"[{len(records)} context image(s) omitted here; access "
                        "them via context_images in the REPL]"
                    ),
                }
            )
        out.append({"role": _WIRE_ROLES[msg.role], "content": parts})
    return out


def _request_has_image_parts(serialized: list[dict]) -> bool:
    return any(
        part.get("type") == "image_url"
        for message in serialized
        for part in message.get("content", [])
    )


@dataclass
class RecordedRequest:
    origin: str  # "root" | "subcall" | "report"
    messages: list[dict]

    @property
    def has_image_parts(self) -> bool:
        return _request_has_image_parts(self.messages)


class ScriptedProvider:
    """Replays a fixed transcript and records every request it receives.

    Strictly sequential: responses are consumed in order and running past
    the end raises ScriptExhausted.
    """

    def __init__(self, script: ProviderScript):
        self.script = script
        self.cursor = 0
        self.recorded_requests: list[RecordedRequest] = []

    def complete(
        self,
        messages: Sequence[Message],
        *,
        table: Optional[ImageTable] = None,
        include_images: bool = True,
        origin: str = "root",
    ) -> ProviderReply:
        if not messages:
            raise ValueError("messages must be non-empty")
        serialized = serialize_messages(messages, table, include_images)
        self.recorded_requests.append(RecordedRequest(origin, serialized))
        if self.cursor >= len(self.script.responses):
            raise ScriptExhausted(
                f"scripted provider exhausted after {self.cursor} responses"
            )
        canned = self.script.responses[self.cursor]
        self.cursor += 1
        return ProviderReply(
            text=canned.text,
            input_tokens=canned.input_tokens,
            output_tokens=canned.output_tokens,
            wall_clock_s=canned.wall_clock_s,
        )


class HttpProvider:
    """Live chat-completions client.

    Endpoint and credentials come from arguments or the VISIONLOOP_* env
    vars. One retry on transport errors; retries surface through the
    optional event sink so the session can record them.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        model: Optional[str] = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        retries: int = DEFAULT_TRANSPORT_RETRIES,
        event_sink: Optional[Callable[[str, str], None]] = None,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.timeout_s = timeout_s
        self.retries = retries
        self.event_sink = event_sink
        self._session = session or requests.Session()
        if not self.base_url:
            raise ProviderError(f"no provider base URL; set {ENV_BASE_URL}")

    def build_body(
        self,
        messages: Sequence[Message],
        table: Optional[ImageTable],
        include_images: bool,
    ) -> dict:
        return {
            "model": self.model,
            "messages": serialize_messages(messages, table, include_images),
        }

    def complete(
        self,
        messages: Sequence[Message],
        *,
        table: Optional[ImageTable] = None,
        include_images: bool = True,
        origin: str = "root",
    ) -> ProviderReply:
        if not messages:
            raise ValueError("messages must be non-empty")
        body = self.build_body(messages, table, include_images)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/chat/completions"
        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            started = time.monotonic()
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = exc
                if self.event_sink and attempt < self.retries:
                    self.event_sink(
                        "provider-retry",
                        f"transport error on attempt {attempt + 1}: {exc}",
                    )
                continue
            if resp.status_code != 200:
                raise ProviderError(
                    f"provider returned HTTP {resp.status_code}: {resp.text[:500]}"
                )
            elapsed = time.monotonic() - started
            return self._parse_reply(resp, elapsed)
        raise ProviderError(f"transport failure after retries: {last_error}")

    @staticmethod
    def _parse_reply(resp: requests.Response, elapsed: float) -> ProviderReply:
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        usage = payload.get("usage", {}) or {}
        return ProviderReply(
            text=text if isinstance(text, str) else "",
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            wall_clock_s=elapsed,
        )


class RecordingProvider:
    """Wraps any provider and accumulates its replies into a replay script."""

    def __init__(self, inner):
        self.inner = inner
        self._responses: list[CannedResponse] = []

    def complete(self, messages, **kwargs) -> ProviderReply:
        reply = self.inner.complete(messages, **kwargs)
        self._responses.append(
            CannedResponse(
                text=reply.text,
                input_tokens=reply.input_tokens,
                output_tokens=reply.output_tokens,
                wall_clock_s=reply.wall_clock_s,
            )
        )
        return reply

    def script(self) -> ProviderScript:
        return ProviderScript(list(self._responses))

    @property
    def recorded_requests(self) -> list[RecordedRequest]:
        return getattr(self.inner, "recorded_requests", [])
