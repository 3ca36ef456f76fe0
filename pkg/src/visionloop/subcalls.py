"""Sub-model call dispatch for the vision primitives exposed in the sandbox.

Sandbox code reaches the model exclusively through these requests: a
text-only query, a single-image description, a free-form query over table
and/or derived images, and a batched variant that pairs each prompt with
its own image specification. Derived images ride along as inline records
and never join the root history.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

from .errors import IndexOutOfRange, MixedSpecMissing
from .images import ImageRecord, ImageTable
from .messages import Message, ROLE_USER
from .providers import ProviderReply, Usage


class SubCallKind(str, Enum):
    TEXT_QUERY = "TextQuery"
    DESCRIBE_IMAGE = "DescribeImage"
    QUERY_WITH_IMAGES = "QueryWithImages"
    BATCHED_QUERY_WITH_IMAGES = "BatchedQueryWithImages"


# Per-prompt image spec in a batched call: one index, a list of indices, or
# nothing for a text-only pairing.
ImageSpec = Union[int, Sequence[int], None]


@dataclass
class SubCallRequest:
    kind: SubCallKind
    prompt: Union[str, list[str]]
    image_indices: Optional[list] = None
    image_sources: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        if self.kind == SubCallKind.DESCRIBE_IMAGE:
            if not (
                isinstance(self.image_indices, list) and len(self.image_indices) == 1
            ):
                raise ValueError("describe_image takes exactly one image index")
        if self.kind == SubCallKind.QUERY_WITH_IMAGES:
            if not self.image_indices and not self.image_sources:
                raise MixedSpecMissing(
                    "llm_query_with_images needs image_indices or image_sources"
                )
        if self.kind == SubCallKind.BATCHED_QUERY_WITH_IMAGES:
            if not isinstance(self.prompt, list):
                raise ValueError("batched sub-call needs a list of prompts")
            for name, specs in (
                ("image_indices", self.image_indices),
                ("image_sources", self.image_sources or None),
            ):
                if specs is not None and len(specs) != len(self.prompt):
                    raise ValueError(
                        f"batched {name} length {len(specs)} != prompt count "
                        f"{len(self.prompt)}"
                    )
            if not self.image_indices and not self.image_sources:
                raise MixedSpecMissing(
                    "batched sub-call needs image_indices or image_sources"
                )

    def as_frame_payload(self) -> dict:
        return {
            "kind": self.kind.value,
            "prompt": self.prompt,
            "image_indices": self.image_indices,
            "image_sources": list(self.image_sources),
        }

    @classmethod
    def from_frame_payload(cls, payload: dict) -> "SubCallRequest":
        return cls(
            kind=SubCallKind(payload["kind"]),
            prompt=payload["prompt"],
            image_indices=payload.get("image_indices"),
            image_sources=list(payload.get("image_sources") or []),
        )


def _resolve_sources(sources: Sequence[dict]) -> list[ImageRecord]:
    return [ImageRecord.from_dict(s) for s in sources]


def _one_shot_message(
    prompt: str,
    indices: Sequence[int],
    sources: Sequence[dict],
    table: ImageTable,
) -> Message:
    for i in indices:
        table.get(i)  # bounds check up front
    return Message(
        role=ROLE_USER,
        text=prompt,
        image_indices=tuple(indices),
        image_sources=tuple(_resolve_sources(sources)),
    )


def handle_subcall(
    request: SubCallRequest,
    table: ImageTable,
    provider,
    *,
    origin: str = "subcall",
    on_reply: Optional[Callable[[ProviderReply], None]] = None,
    parallel: bool = False,
) -> Union[str, list[str]]:
    """Build the one-shot multimodal message(s), call the provider, return text.

    Batched requests dispatch one provider call per prompt/image pair —
    concurrently when `parallel` is set — and always return the responses
    in input order.
    """
    request.validate()
    if request.kind == SubCallKind.BATCHED_QUERY_WITH_IMAGES:
        prompts: list[str] = list(request.prompt)
        messages: list[Message] = []
        for pos, prompt in enumerate(prompts):
            spec = request.image_indices[pos] if request.image_indices else None
            if spec is None:
                indices: list[int] = []
            elif isinstance(spec, int):
                indices = [spec]
            else:
                indices = list(spec)
            src = request.image_sources[pos] if request.image_sources else None
            if src is None:
                sources: list[dict] = []
            elif isinstance(src, dict):
                sources = [src]
            else:
                sources = list(src)
            messages.append(_one_shot_message(prompt, indices, sources, table))

        def one_call(message: Message) -> ProviderReply:
            return provider.complete(
                [message], table=table, include_images=True, origin=origin
            )

        if parallel and len(messages) > 1:
            with ThreadPoolExecutor(max_workers=len(messages)) as pool:
                replies = list(pool.map(one_call, messages))
        else:
            replies = [one_call(m) for m in messages]
        for reply in replies:
            if on_reply:
                on_reply(reply)
        return [reply.text for reply in replies]

    if request.kind == SubCallKind.TEXT_QUERY:
        message = Message(role=ROLE_USER, text=str(request.prompt))
    else:
        message = _one_shot_message(
            str(request.prompt),
            list(request.image_indices or []),
            request.image_sources,
            table,
        )
    reply = provider.complete(
        [message], table=table, include_images=True, origin=origin
    )
    if on_reply:
        on_reply(reply)
    return reply.text


class SubCallDispatcher:
    """Session-scoped sub-call handler: traces, accounts usage, dispatches.

    The executor invokes this from inside a code block; errors raised here
    (bad index, missing image spec) surface back into the sandbox as an
    in-sandbox exception rather than killing the session.
    """

    def __init__(self, table: ImageTable, provider, usage: Usage, sink):
        self.table = table
        self.provider = provider
        self.usage = usage
        self.sink = sink
        self.iteration = 0
        self.count = 0
        # concurrent batched dispatch; leave off for scripted providers,
        # which are strictly sequential
        self.parallel_batched = False

    def __call__(self, request: SubCallRequest) -> Union[str, list[str]]:
        payload = request.as_frame_payload()
        self.sink.emit(
            "SubCall",
            {
                "iteration": self.iteration,
                "kind": payload["kind"],
                "prompt": payload["prompt"],
                "image_indices": payload["image_indices"],
                "image_source_count": len(payload["image_sources"]),
            },
        )
        replies: list[ProviderReply] = []
        try:
            result = handle_subcall(
                request,
                self.table,
                self.provider,
                on_reply=replies.append,
                parallel=self.parallel_batched,
            )
        except (IndexOutOfRange, MixedSpecMissing, ValueError) as exc:
            self.sink.emit(
                "SubCallResult",
                {
                    "iteration": self.iteration,
                    "error": str(exc),
                    "usage": {"input_tokens": 0, "output_tokens": 0, "wall_clock_s": 0.0},
                },
            )
            raise
        for reply in replies:
            self.usage.add_reply(reply, subcall=True)
            self.count += 1
        result_field = {"texts": result} if isinstance(result, list) else {"text": result}
        combined = {
            "input_tokens": sum(r.input_tokens for r in replies),
            "output_tokens": sum(r.output_tokens for r in replies),
            "wall_clock_s": sum(r.wall_clock_s for r in replies),
        }
        self.sink.emit(
            "SubCallResult",
            {"iteration": self.iteration, "usage": combined, **result_field},
        )
        return result
