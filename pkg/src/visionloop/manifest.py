"""Case manifest and mask-statistics file ingestion.

Both files are plain JSON (documented in the README): the manifest names
the case images with their unit labels, the prompt, the clinical profile,
optional per-label mask volumes, and an optional ground-truth reference
text for side-by-side comparison in the rendered report.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ManifestError
from .images import DETAIL_LEVELS, ImageRecord
from .profiles import DEFAULT_MASK_LABELS, PROFILE_CXR, PROFILE_NEURO
from .session import DEFAULT_HARD_CEILING, SessionRequest

KNOWN_MANIFEST_PROFILES = (PROFILE_NEURO, PROFILE_CXR)


@dataclass(frozen=True)
class ManifestImage:
    path: str
    media_type: str
    unit_label: str
    detail: str = "auto"


@dataclass
class CaseManifest:
    prompt: str
    profile: str
    images: list[ManifestImage]
    mask_labels: tuple = DEFAULT_MASK_LABELS
    mask_volumes_cc: Optional[list[float]] = None
    gt_reference: Optional[str] = None
    base_dir: Path = field(default_factory=Path)

    def to_request(
        self,
        router_enabled: bool = True,
        hard_ceiling: int = DEFAULT_HARD_CEILING,
    ) -> SessionRequest:
        records = []
        for image in self.images:
            raw = (self.base_dir / image.path).read_bytes()
            records.append(
                ImageRecord(
                    data=base64.b64encode(raw).decode("ascii"),
                    media_type=image.media_type,
                    detail=image.detail,
                )
            )
        return SessionRequest(
            prompt=self.prompt,
            images=records,
            image_labels=[img.unit_label for img in self.images],
            router_enabled=router_enabled,
            hard_ceiling=hard_ceiling,
            clinical_profile=self.profile,
            mask_stats=self.mask_volumes_cc,
            mask_labels=self.mask_labels,
        )


def parse_mask_stats(payload: dict) -> tuple[tuple, list[float]]:
    labels = tuple(payload.get("labels", DEFAULT_MASK_LABELS))
    volumes = payload.get("volumes_cc")
    if not isinstance(volumes, list) or not volumes:
        raise ManifestError("mask_stats needs a non-empty volumes_cc list")
    if len(labels) != len(volumes):
        raise ManifestError("mask_stats labels and volumes_cc differ in length")
    try:
        volumes = [float(v) for v in volumes]
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"mask volumes must be numbers: {exc}") from exc
    if any(v < 0 for v in volumes):
        raise ManifestError("mask volumes must be non-negative")
    return labels, volumes


def load_mask_stats(path) -> tuple[tuple, list[float]]:
    try:
        payload = json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read mask-stats file {path}: {exc}") from exc
    return parse_mask_stats(payload)


def load_manifest(path) -> CaseManifest:
    manifest_path = Path(path)
    try:
        payload = json.loads(manifest_path.read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    prompt = payload.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        raise ManifestError("manifest needs a non-empty prompt")
    profile = payload.get("profile")
    if profile not in KNOWN_MANIFEST_PROFILES:
        raise ManifestError(
            f"manifest profile must be one of {KNOWN_MANIFEST_PROFILES}, got {profile!r}"
        )

    base_dir = manifest_path.parent
    images: list[ManifestImage] = []
    labels_seen: set[str] = set()
    for entry in payload.get("images", []):
        image = ManifestImage(
            path=entry["path"],
            media_type=entry.get("media_type", "image/png"),
            unit_label=entry["unit_label"],
            detail=entry.get("detail", "auto"),
        )
        if not image.media_type.startswith("image/"):
            raise ManifestError(f"media_type must be image/*: {image.media_type!r}")
        if image.detail not in DETAIL_LEVELS:
            raise ManifestError(f"detail must be one of {DETAIL_LEVELS}")
        if image.unit_label in labels_seen:
            raise ManifestError(f"duplicate unit_label {image.unit_label!r}")
        labels_seen.add(image.unit_label)
        if not (base_dir / image.path).is_file():
            raise ManifestError(f"image path does not exist: {base_dir / image.path}")
        images.append(image)

    mask_labels: tuple = DEFAULT_MASK_LABELS
    mask_volumes: Optional[list[float]] = None
    if payload.get("mask_stats") is not None:
        mask_labels, mask_volumes = parse_mask_stats(payload["mask_stats"])

    gt_reference = payload.get("gt_reference")
    if gt_reference is not None and not isinstance(gt_reference, str):
        raise ManifestError("gt_reference must be a string when present")

    return CaseManifest(
        prompt=prompt,
        profile=profile,
        images=images,
        mask_labels=mask_labels,
        mask_volumes_cc=mask_volumes,
        gt_reference=gt_reference,
        base_dir=base_dir,
    )
