"""Modality-aware prompt profiles and evidence assembly.

Profiles live as plain-text template files under profiles/ so a new imaging
modality is a new file, not a rebuild. A profile carries one clinically
targeted sub-prompt per imaging unit (MRI sequence or X-ray view), the
cross-modal comparison pairs, and the synthesis instruction.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .errors import UnknownView

PROFILE_NEURO = "neuro"
PROFILE_CXR = "cxr"
PROFILE_NONE = "none"

DEFAULT_EVIDENCE_CHAR_LIMIT = 2000
EVIDENCE_TRUNCATION_MARKER = "...[truncated]"

# Full names for the neuro mask sub-region labels, in canonical order.
MASK_LABEL_NAMES = {
    "NCR": "Necrotic Core",
    "ED": "Peritumoral Oedema",
    "ET": "Enhancing Tumour",
}
DEFAULT_MASK_LABELS = ("NCR", "ED", "ET")

_PROFILE_FILES = {
    PROFILE_NEURO: "neuro.profile",
    PROFILE_CXR: "chest_xray.profile",
}

_SECTION_RE = re.compile(r"^\[(unit|pair|synthesis)\s*([^\]]*)\]\s*$")


@dataclass(frozen=True)
class ModalityProfile:
    name: str
    units: tuple[tuple[str, str], ...]  # (unit_label, sub-prompt)
    cross_modal_pairs: tuple[tuple[str, str, str], ...]  # (label_a, label_b, prompt)
    synthesis_template: str

    def unit_prompt(self, label: str) -> str:
        for unit_label, prompt in self.units:
            if unit_label == label:
                return prompt
        raise UnknownView(f"view {label!r} is not part of the {self.name} profile")

    def unit_labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.units)


def _read_data_file(name: str) -> str:
    return resources.files("visionloop").joinpath("profiles", name).read_text("utf-8")


def _parse_profile(name: str, text: str) -> ModalityProfile:
    units: list[tuple[str, str]] = []
    pairs: list[tuple[str, str, str]] = []
    synthesis = ""
    section: Optional[tuple] = None
    body: list[str] = []

    def close() -> None:
        nonlocal synthesis
        if section is None:
            return
        content = "\n".join(body).strip()
        kind = section[0]
        if kind == "unit":
            units.append((section[1], content))
        elif kind == "pair":
            pairs.append((section[1], section[2], content))
        else:
            synthesis = content

    for line in text.splitlines():
        match = _SECTION_RE.match(line)
        if match:
            close()
            kind, rest = match.group(1), match.group(2).split()
            if kind == "unit":
                section = ("unit", rest[0])
            elif kind == "pair":
                section = ("pair", rest[0], rest[1])
            else:
                section = ("synthesis",)
            body = []
        elif section is not None:
            body.append(line)
    close()
    return ModalityProfile(name, tuple(units), tuple(pairs), synthesis)


@functools.lru_cache(maxsize=None)
def _load_profile(kind: str) -> ModalityProfile:
    return _parse_profile(kind, _read_data_file(_PROFILE_FILES[kind]))


def profile(kind: str, available_views: Optional[Sequence[str]] = None) -> ModalityProfile:
    """Return the profile for a modality, restricted to the available views.

    The neuro profile is fixed at its five canonical units. The chest
    radiography profile keeps only the views actually present and errors on
    unknown or missing views.
    """
    if kind not in _PROFILE_FILES:
        raise UnknownView(f"unknown clinical profile {kind!r}")
    full = _load_profile(kind)
    if kind == PROFILE_NEURO:
        return full
    if not available_views:
        raise UnknownView("chest radiography profile needs at least one view")
    known = {label for label, _ in full.units}
    for view in available_views:
        if view not in known:
            raise UnknownView(f"view {view!r} is not part of the {kind} profile")
    present = set(available_views)
    units = tuple((label, p) for label, p in full.units if label in present)
    pairs = tuple(
        (a, b, p) for a, b, p in full.cross_modal_pairs if a in present and b in present
    )
    return ModalityProfile(full.name, units, pairs, full.synthesis_template)


@functools.lru_cache(maxsize=None)
def system_prompt() -> str:
    return _read_data_file("system_prompt.txt").rstrip("\n")


@functools.lru_cache(maxsize=None)
def _iteration_template() -> str:
    return _read_data_file("iteration_prompt.txt").rstrip("\n")


def iteration_prompt(iteration: int) -> str:
    return _iteration_template().format(iteration=iteration)


@functools.lru_cache(maxsize=None)
def default_answer_prompt() -> str:
    return _read_data_file("default_answer_prompt.txt").rstrip("\n")


# ---------------------------------------------------------------------------
# Evidence assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceUnit:
    label: str
    text: str
    truncated: bool


@dataclass(frozen=True)
class EvidenceBundle:
    per_unit: tuple[EvidenceUnit, ...]
    cross_modal: str
    cross_modal_truncated: bool
    char_limit: int

    def render(self) -> str:
        """Single labeled evidence text for the synthesis call."""
        blocks = []
        for unit in self.per_unit:
            text = unit.text + (EVIDENCE_TRUNCATION_MARKER if unit.truncated else "")
            blocks.append(f"=== {unit.label} ===\n{text}")
        cross = self.cross_modal + (
            EVIDENCE_TRUNCATION_MARKER if self.cross_modal_truncated else ""
        )
        blocks.append(f"=== Cross-modal comparison ===\n{cross}")
        return "\n\n".join(blocks)


def assemble_evidence(
    descriptions: Sequence[tuple[str, str]],
    cross_modal_text: str,
    char_limit: int = DEFAULT_EVIDENCE_CHAR_LIMIT,
) -> EvidenceBundle:
    """Cap each description at char_limit, preserving order and labels."""
    if char_limit <= 0:
        raise ValueError("char_limit must be positive")
    units = []
    for label, text in descriptions:
        truncated = len(text) > char_limit
        units.append(EvidenceUnit(label, text[:char_limit], truncated))
    cross_truncated = len(cross_modal_text) > char_limit
    return EvidenceBundle(
        per_unit=tuple(units),
        cross_modal=cross_modal_text[:char_limit],
        cross_modal_truncated=cross_truncated,
        char_limit=char_limit,
    )
