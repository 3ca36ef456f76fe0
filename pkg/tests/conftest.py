"""Shared fixtures: canned transcripts, tiny images, manifest builders."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import pytest

from visionloop import (
    CannedResponse,
    ImageRecord,
    ProviderScript,
    SessionRequest,
)

# 1x1 transparent PNG, enough for any image-path fixture.
PNG_B64 = (
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA"
    "60e6kgAAAABJRU5ErkJggg=="
)

NEURO_LABELS = ["T1n", "T1ce", "T2w", "T2-FLAIR", "Overlay"]

MEN_MASK_STATS = [0.0, 0.0, 9.83]
MEN_INPUT_TOKENS_TOTAL = 13321
MEN_WALL_CLOCK_TOTAL = 67.0
MEN_SUBCALLS = 7

MIMIC_INPUT_TOKENS_TOTAL = 5507
MIMIC_WALL_CLOCK_TOTAL = 29.0
MIMIC_SUBCALLS = 5

MIMIC_GT_REFERENCE = (
    "The lungs are clear without focal consolidation, effusion, or "
    "pneumothorax. Heart size within normal limits. Surgical clips project "
    "over the left breast; old left-sided rib fractures."
)

MIMIC_EXTRACTION_JSON = {
    "Lungs": "Clear lung fields without focal consolidation.",
    "Cardiac Silhouette": "Upper-normal size; AP magnification caveat applies.",
    "Pleural Spaces": "No effusion or pneumothorax.",
    "Bones & Support Devices": "Surgical clips over the left breast; old rib fractures.",
    "Impression": "No acute cardiopulmonary process.",
}


def make_images(count: int, detail: str = "low") -> list[ImageRecord]:
    return [ImageRecord(PNG_B64, "image/png", detail) for _ in range(count)]


def men_request(**overrides) -> SessionRequest:
    params = dict(
        prompt="Characterise each tumour sub-region on the peak-tumour axial slice.",
        images=make_images(5),
        image_labels=list(NEURO_LABELS),
        router_enabled=True,
        clinical_profile="neuro",
        mask_stats=list(MEN_MASK_STATS),
    )
    params.update(overrides)
    return SessionRequest(**params)


_MEN_DESCRIBE_PROMPTS = [
    (
        "T1n",
        "Describe the brain MRI image: T1n (native T1). Emphasise lesion "
        "laterality and anatomical boundaries.",
    ),
    (
        "T1ce",
        "Describe the brain MRI image: T1ce (contrast-enhanced T1). Focus on "
        "the enhancement pattern and any dural tail sign.",
    ),
    (
        "T2w",
        "Describe the brain MRI image: T2w (T2-weighted). Emphasise oedema "
        "extent and fluid signal.",
    ),
    (
        "T2-FLAIR",
        "Describe the brain MRI image: T2-FLAIR. Attend to peritumoral signal "
        "and hyperintensity surrounding the lesion.",
    ),
    (
        "Overlay",
        "Describe the segmentation overlay image: NCR in red, ED in yellow, "
        "ET in green. State which colours are present and where they sit "
        "relative to the anatomy.",
    ),
]

MEN_SYNTHESIS_TEXT = (
    "Location: posterior fossa, midline on this axial slice. "
    "Sub-region Analysis: a single enhancing component with lobulated "
    "borders; no necrotic core and no oedema overlay region. "
    "Mass Effect: mild effacement of adjacent structures. "
    "Key Imaging Features: intense enhancement, FLAIR hyperintense rim "
    "without a matching segmentation region. "
    "GT Agreement: consistent with ET 9.83 cc at 100% share."
)


def men_script() -> ProviderScript:
    """Survey -> per-modality describes -> cross-modal + synthesis -> FINAL_VAR.

    Input tokens sum to 13,321 across 3 root calls and 7 sub-calls; per-call
    wall clocks sum to 67.0 s.
    """
    describe_lines = "\n".join(
        f"{label.replace('-', '_').lower()}_desc = describe_image({idx}, \"{prompt}\")"
        for idx, (label, prompt) in enumerate(_MEN_DESCRIBE_PROMPTS)
    )
    responses = [
        CannedResponse(
            "Surveying the provided context before any imaging claims.\n"
            "```repl\n"
            'print("Context ready: five modality images and mask statistics '
            'are available.")\n'
            "```",
            input_tokens=2847,
            output_tokens=38,
            wall_clock_s=9.5,
        ),
        CannedResponse(
            "One targeted description per modality.\n"
            "```repl\n" + describe_lines + "\n"
            'print("All five modality descriptions recorded.")\n'
            "```",
            input_tokens=1203,
            output_tokens=182,
            wall_clock_s=6.2,
        ),
        CannedResponse(
            "T1n: well-defined extra-axial mass, midline posterior fossa.",
            input_tokens=1212,
            output_tokens=24,
            wall_clock_s=6.8,
        ),
        CannedResponse(
            "T1ce: intense, slightly irregular enhancement of the mass.",
            input_tokens=1212,
            output_tokens=24,
            wall_clock_s=6.8,
        ),
        CannedResponse(
            "T2w: heterogeneous signal, fluid-bright rim around the lesion.",
            input_tokens=1212,
            output_tokens=24,
            wall_clock_s=6.8,
        ),
        CannedResponse(
            "T2-FLAIR: hyperintense ring suggesting peritumoral oedema.",
            input_tokens=1212,
            output_tokens=24,
            wall_clock_s=6.8,
        ),
        CannedResponse(
            "Overlay: only the green (ET) region is drawn; no red, no yellow.",
            input_tokens=1212,
            output_tokens=24,
            wall_clock_s=6.8,
        ),
        CannedResponse(
            "Cross-modal check, then synthesis.\n"
            "```repl\n"
            'cross_q = llm_query_with_images("Compare the enhancing component '
            "on T1ce with the FLAIR hyperintensity; flag discrepancies with "
            'the segmentation border.", image_indices=[1, 3])\n'
            'evidence = "T1ce: " + t1ce_desc + " FLAIR: " + t2_flair_desc + '
            '" Overlay: " + overlay_desc + " Cross: " + cross_q\n'
            'report = llm_query("Synthesize a formal structured '
            "neuroradiology report (Location; Sub-region Analysis; Mass "
            "Effect; Key Imaging Features; GT Agreement) from the evidence: "
            '" + evidence)\n'
            'FINAL_VAR("report")\n'
            "```",
            input_tokens=1571,
            output_tokens=204,
            wall_clock_s=7.3,
        ),
        CannedResponse(
            "FLAIR shows a hyperintense rim beyond the enhancing border, yet "
            "the overlay draws no oedema region there.",
            input_tokens=884,
            output_tokens=31,
            wall_clock_s=5.4,
        ),
        CannedResponse(
            MEN_SYNTHESIS_TEXT,
            input_tokens=756,
            output_tokens=120,
            wall_clock_s=4.6,
        ),
    ]
    return ProviderScript(responses)


def mimic_request(**overrides) -> SessionRequest:
    params = dict(
        prompt="Generate structured FINDINGS and IMPRESSION sections for this study.",
        images=make_images(1),
        image_labels=["AP"],
        router_enabled=False,
        clinical_profile="cxr",
    )
    params.update(overrides)
    return SessionRequest(**params)


MIMIC_SYNTHESIS_TEXT = (
    "Lungs: clear fields, no focal consolidation. "
    "Cardiac Silhouette: size judged upper-normal, caveated for AP portable "
    "magnification. Pleural Spaces: no effusion, no pneumothorax. "
    "Bones & Support Devices: surgical clips over the left breast, old rib "
    "fractures. Impression: no acute cardiopulmonary process."
)


def mimic_script(with_extraction: bool = True) -> ProviderScript:
    """AP-only study: probe -> view assessment (3 sub-calls) -> report (2).

    Input tokens sum to 5,507 over 3 root calls and 5 sub-calls; wall clocks
    sum to 29.0 s. An optional trailing response feeds report extraction.
    """
    responses = [
        CannedResponse(
            "Context probe first.\n"
            "```repl\n"
            'print("Single AP portable chest radiograph in context.")\n'
            "```",
            input_tokens=812,
            output_tokens=30,
            wall_clock_s=3.1,
        ),
        CannedResponse(
            "Systematic single-view assessment.\n"
            "```repl\n"
            'ap_desc = describe_image(0, "Assess the AP portable chest '
            "radiograph: lung fields, pleura, bones, and support devices. "
            "Caveat any cardiac size estimate with the cardiac magnification "
            'artefact inherent to the AP portable projection.")\n'
            'cardiac_q = llm_query_with_images("Estimate cardiac silhouette '
            'size, explicitly accounting for AP portable magnification.", '
            "image_indices=[0])\n"
            'devices_q = llm_query_with_images("Identify bones, fractures, '
            'and support devices.", image_indices=[0])\n'
            'print("View assessment recorded.")\n'
            "```",
            input_tokens=641,
            output_tokens=150,
            wall_clock_s=2.6,
        ),
        CannedResponse(
            "AP portable view: clear lungs, no effusion or pneumothorax; "
            "clips over the left breast.",
            input_tokens=903,
            output_tokens=28,
            wall_clock_s=4.9,
        ),
        CannedResponse(
            "Cardiac silhouette appears upper-normal; AP magnification makes "
            "it unreliable to call enlargement.",
            input_tokens=702,
            output_tokens=26,
            wall_clock_s=4.2,
        ),
        CannedResponse(
            "Old left rib fractures; multiple surgical clips; no lines or tubes.",
            input_tokens=598,
            output_tokens=22,
            wall_clock_s=3.8,
        ),
        CannedResponse(
            "Assemble and return the report.\n"
            "```repl\n"
            'findings = llm_query("Draft the FINDINGS section from the '
            'recorded evidence.")\n'
            'report = llm_query("Compose the structured chest radiography '
            "report (Lungs; Cardiac Silhouette; Pleural Spaces; Bones & "
            'Support Devices; Impression) using: " + findings)\n'
            'FINAL_VAR("report")\n'
            "```",
            input_tokens=702,
            output_tokens=140,
            wall_clock_s=2.8,
        ),
        CannedResponse(
            "FINDINGS: clear lungs; upper-normal cardiac silhouette (AP "
            "caveat); no effusion; clips and old fractures on the left.",
            input_tokens=581,
            output_tokens=36,
            wall_clock_s=3.9,
        ),
        CannedResponse(
            MIMIC_SYNTHESIS_TEXT,
            input_tokens=568,
            output_tokens=110,
            wall_clock_s=3.7,
        ),
    ]
    if with_extraction:
        responses.append(
            CannedResponse(
                json.dumps(MIMIC_EXTRACTION_JSON),
                input_tokens=410,
                output_tokens=95,
                wall_clock_s=2.2,
            )
        )
    return ProviderScript(responses)


def stall_script(with_report: bool = True) -> ProviderScript:
    """Three productive turns (the first stores `report`), then two no-ops.

    With budget 3, the stall rule fires at index 4. Without a stored report
    the trailing response feeds the default-answer call instead.
    """
    first_code = (
        'report = "FINDINGS: solitary enhancing mass with sharp margins."'
        if with_report
        else 'working_note = "FINDINGS draft pending."'
    )
    responses = [
        CannedResponse(
            "Drafting early.\n```repl\n"
            + first_code
            + '\nprint("Initial draft stored for later review.")\n```',
            input_tokens=900,
            output_tokens=40,
            wall_clock_s=2.0,
        ),
        CannedResponse(
            "Checking sequences.\n```repl\n"
            'print("Cross-checking enhancement across sequences now.")\n```',
            input_tokens=700,
            output_tokens=30,
            wall_clock_s=1.5,
        ),
        CannedResponse(
            "Checking statistics.\n```repl\n"
            'print("Verifying mask statistics against the visual impression.")\n```',
            input_tokens=650,
            output_tokens=30,
            wall_clock_s=1.4,
        ),
        CannedResponse("Reflecting.", input_tokens=400, output_tokens=4, wall_clock_s=0.8),
        CannedResponse("Still reflecting.", input_tokens=380, output_tokens=4, wall_clock_s=0.7),
    ]
    if not with_report:
        responses.append(
            CannedResponse(
                "Summary: a solitary enhancing mass; analysis stalled before synthesis.",
                input_tokens=350,
                output_tokens=20,
                wall_clock_s=0.9,
            )
        )
    return ProviderScript(responses)


def write_case_fixture(
    tmp_path: Path,
    *,
    profile: str = "neuro",
    script: ProviderScript,
    mask_stats: bool = True,
    gt_reference: str | None = None,
) -> tuple[Path, Path]:
    """Write a runnable manifest + provider script under tmp_path."""
    png_bytes = base64.b64decode(PNG_B64)
    labels = NEURO_LABELS if profile == "neuro" else ["AP"]
    images = []
    for label in labels:
        img_path = tmp_path / f"{label}.png"
        img_path.write_bytes(png_bytes)
        images.append(
            {
                "path": img_path.name,
                "media_type": "image/png",
                "unit_label": label,
                "detail": "low",
            }
        )
    manifest: dict = {
        "prompt": "Characterise the study.",
        "profile": profile,
        "images": images,
    }
    if profile == "neuro" and mask_stats:
        manifest["mask_stats"] = {
            "labels": ["NCR", "ED", "ET"],
            "volumes_cc": MEN_MASK_STATS,
        }
    if gt_reference is not None:
        manifest["gt_reference"] = gt_reference
    manifest_path = tmp_path / "case.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    script_path = tmp_path / "script.json"
    script.save(str(script_path))
    return manifest_path, script_path


@pytest.fixture
def neuro_request() -> SessionRequest:
    return men_request()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            if "test_acceptance" in rep.nodeid:
                rows.append((rep.nodeid.split("::")[-1], outcome.upper()))
    if rows:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for name, outcome in rows:
            terminalreporter.write_line(f"  {outcome:6s} {name}")
