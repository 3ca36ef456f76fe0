"""Image records and the session-local image table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import IndexOutOfRange

DETAIL_LEVELS = ("low", "high", "auto")


@dataclass(frozen=True)
class ImageRecord:
    """One context image: payload (base64 or URL), MIME type, detail hint."""

    data: str
    media_type: str
    detail: str = "auto"

    def __post_init__(self) -> None:
        if not self.data:
            raise ValueError("image data must be non-empty")
        if not self.media_type.startswith("image/"):
            raise ValueError(f"media_type must be image/*: {self.media_type!r}")
        if self.detail not in DETAIL_LEVELS:
            raise ValueError(f"detail must be one of {DETAIL_LEVELS}: {self.detail!r}")

    def as_context_dict(self) -> dict:
        """The exact three-key dict exposed as a context_images entry."""
        return {"data": self.data, "media_type": self.media_type, "detail": self.detail}

    @classmethod
    def from_dict(cls, payload: dict) -> "ImageRecord":
        return cls(
            data=payload["data"],
            media_type=payload["media_type"],
            detail=payload.get("detail", "auto"),
        )

    def as_url(self) -> str:
        """Data URI for base64 payloads; URLs pass through untouched."""
        if self.data.startswith(("http://", "https://", "data:")):
            return self.data
        return f"data:{self.media_type};base64,{self.data}"


class ImageTable:
    """Append-only table of session context images; indices are stable."""

    def __init__(self, records: Iterable[ImageRecord] = ()):
        self._records: list[ImageRecord] = list(records)

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: ImageRecord) -> int:
        self._records.append(record)
        return len(self._records) - 1

    def get(self, index: int) -> ImageRecord:
        if not isinstance(index, int) or isinstance(index, bool):
            raise IndexOutOfRange(f"image index must be an integer: {index!r}")
        if index < 0 or index >= len(self._records):
            raise IndexOutOfRange(
                f"image index {index} out of range for image table of size "
                f"{len(self._records)}"
            )
        return self._records[index]

    @property
    def records(self) -> tuple[ImageRecord, ...]:
        return tuple(self._records)
