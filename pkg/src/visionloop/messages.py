"""Message history primitives.

A session history is a plain list of Message objects. Only the first user
message may reference context images; later turns are text-only and reach
the images through the executor's injected bindings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .images import ImageRecord

ROLE_SYSTEM = "system"
ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"
ROLE_TOOL_OUTPUT = "tool-output"

ROLES = (ROLE_SYSTEM, ROLE_USER, ROLE_ASSISTANT, ROLE_TOOL_OUTPUT)


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    image_indices: tuple[int, ...] = ()
    image_sources: tuple[ImageRecord, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def has_images(self) -> bool:
        return bool(self.image_indices) or bool(self.image_sources)


def image_bearing_messages(history: list[Message]) -> list[Message]:
    return [m for m in history if m.has_images]
