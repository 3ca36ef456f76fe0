"""Two-stage clinical report pipeline.

Stage one turns the free-text synthesis into named sections through a
single strict structured-output provider call (one reformat retry). Stage
two populates the typeset template with the sections, the execution
statistics block, an optional ground-truth reference (chest radiography),
and the mandatory disclaimer footer, then compiles to PDF when a LaTeX
engine is on PATH.
"""

from __future__ import annotations

import json
import shutil
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import TemplateMissing, UnparseableExtraction
from .messages import Message, ROLE_USER
from .profiles import PROFILE_CXR, PROFILE_NEURO

SECTION_ORDER = {
    PROFILE_NEURO: (
        "Location",
        "Sub-region Analysis",
        "Mass Effect",
        "Key Imaging Features",
        "GT Agreement",
    ),
    PROFILE_CXR: (
        "Lungs",
        "Cardiac Silhouette",
        "Pleural Spaces",
        "Bones & Support Devices",
        "Impression",
    ),
}

REPORT_TITLES = {
    PROFILE_NEURO: "Neuroradiology Report",
    PROFILE_CXR: "Chest Radiography Report",
}

MISSING_SECTION_TEXT = "Not assessed"

# Fixed wording; configurable via render(disclaimer=...).
DEFAULT_DISCLAIMER = (
    "AI-generated draft: this document was produced by an automated "
    "vision-language reasoning system and must be reviewed by a qualified "
    "clinician before any clinical use. It is not a diagnosis."
)

_LATEX_SPECIALS = {
    "\\": r"\textbackslash{}",
    "&": r"\&",
    "%": r"\%",
    "$": r"\$",
    "#": r"\#",
    "_": r"\_",
    "{": r"\{",
    "}": r"\}",
    "~": r"\textasciitilde{}",
    "^": r"\textasciicircum{}",
}


def latex_escape(text: str) -> str:
    return "".join(_LATEX_SPECIALS.get(ch, ch) for ch in text)


@dataclass
class ReportSchema:
    variant: str
    sections: dict[str, str]

    def ordered_sections(self) -> list[tuple[str, str]]:
        return [(name, self.sections[name]) for name in SECTION_ORDER[self.variant]]


@dataclass(frozen=True)
class ExecutionStats:
    wall_clock_s: float
    input_tokens: int
    iterations: int
    subcalls: int

    @classmethod
    def from_completion(cls, result) -> "ExecutionStats":
        return cls(
            wall_clock_s=result.usage.wall_clock_s,
            input_tokens=result.usage.input_tokens,
            iterations=result.iterations_used,
            subcalls=result.usage.subcall_count,
        )

    def stats_line(self) -> str:
        return (
            f"{self.wall_clock_s:.1f} s / {self.input_tokens:,} input tokens / "
            f"{self.iterations} iterations / {self.subcalls} sub-calls"
        )


@dataclass
class RenderedReport:
    source_text: str
    tex_path: Optional[str] = None
    pdf_path: Optional[str] = None
    disclaimer_present: bool = True
    notes: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Stage 1: structured extraction
# ---------------------------------------------------------------------------

def _extraction_prompt(synthesis: str, keys: tuple[str, ...]) -> str:
    key_list = ", ".join(f'"{k}"' for k in keys)
    return (
        "Extract the report below into a single JSON object with exactly "
        f"these keys: {key_list}. Each value must be plain prose. Use "
        f'"{MISSING_SECTION_TEXT}" for anything the report does not cover. '
        "Reply with the JSON object only - no code fences, no commentary.\n\n"
        f"Report:\n{synthesis}"
    )


def _reformat_prompt(keys: tuple[str, ...]) -> str:
    key_list = ", ".join(f'"{k}"' for k in keys)
    return (
        "Your previous reply was not a valid JSON object. Reply again with "
        f"ONLY a JSON object whose keys are exactly: {key_list}."
    )


def _parse_extraction(text: str) -> Optional[dict]:
    candidate = text.strip()
    if candidate.startswith("```"):
        lines = [ln for ln in candidate.splitlines() if not ln.strip().startswith("```")]
        candidate = "\n".join(lines).strip()
    try:
        parsed = json.loads(candidate)
    except ValueError:
        return None
    return parsed if isinstance(parsed, dict) else None


def extract_sections(synthesis: str, variant: str, provider, sink=None) -> ReportSchema:
    """One strict structured-output call; absent keys become "Not assessed".

    A malformed reply earns exactly one reformat retry before
    UnparseableExtraction; callers keep the raw synthesis either way.
    """
    if not synthesis:
        raise ValueError("synthesis text must be non-empty")
    keys = SECTION_ORDER[variant]
    messages = [Message(ROLE_USER, _extraction_prompt(synthesis, keys))]
    parsed = None
    for attempt in range(2):
        reply = provider.complete(messages, include_images=False, origin="report")
        if sink is not None:
            sink.emit("SubCall", {"iteration": -1, "kind": "TextQuery", "prompt": messages[-1].text})
            sink.emit(
                "SubCallResult",
                {"iteration": -1, "text": reply.text, "usage": reply.usage_dict()},
            )
        parsed = _parse_extraction(reply.text)
        if parsed is not None:
            break
        if attempt == 0:
            messages.append(Message(ROLE_USER, _reformat_prompt(keys)))
    if parsed is None:
        raise UnparseableExtraction(
            "structured extraction failed twice; keeping raw synthesis"
        )
    sections: dict[str, str] = {}
    for key in keys:
        value = parsed.get(key)
        if not isinstance(value, str) or not value.strip():
            sections[key] = MISSING_SECTION_TEXT
            if sink is not None:
                sink.emit(
                    "Warning",
                    {
                        "code": "missing-report-section",
                        "message": f"extraction lacked section {key!r}; filled with "
                        f"'{MISSING_SECTION_TEXT}'",
                    },
                )
        else:
            sections[key] = value.strip()
    return ReportSchema(variant=variant, sections=sections)


# ---------------------------------------------------------------------------
# Stage 2: document rendering
# ---------------------------------------------------------------------------

def _default_template_text() -> str:
    return resources.files("visionloop").joinpath("templates", "report.tex.in").read_text(
        "utf-8"
    )


def render(
    schema: ReportSchema,
    stats: ExecutionStats,
    gt_reference: Optional[str] = None,
    *,
    template_path: Optional[str] = None,
    output_dir: Optional[str] = None,
    basename: str = "report",
    disclaimer: str = DEFAULT_DISCLAIMER,
    compile_pdf: bool = True,
) -> RenderedReport:
    """Populate the typeset template; deterministic for equal inputs.

    Writes <basename>.tex under output_dir when given, and compiles a PDF
    only if pdflatex is on PATH. A failed compile keeps the source and adds
    a note instead of destroying the report.
    """
    if template_path is not None:
        try:
            template = Path(template_path).read_text("utf-8")
        except FileNotFoundError as exc:
            raise TemplateMissing(str(exc)) from exc
    else:
        template = _default_template_text()

    section_blocks = []
    for name, text in schema.ordered_sections():
        section_blocks.append(f"\\section*{{{latex_escape(name)}}}\n{latex_escape(text)}\n")
    gt_block = ""
    if gt_reference is not None:
        gt_block = (
            f"\\section*{{Ground Truth Reference}}\n{latex_escape(gt_reference)}\n"
        )

    source = (
        template.replace("@TITLE@", latex_escape(REPORT_TITLES[schema.variant]))
        .replace("@SECTIONS@", "\n".join(section_blocks))
        .replace("@GT_BLOCK@", gt_block)
        .replace("@STATS_LINE@", latex_escape(stats.stats_line()))
        .replace("@DISCLAIMER@", latex_escape(disclaimer))
    )

    rendered = RenderedReport(source_text=source)
    if output_dir is None:
        return rendered

    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tex_path = out_dir / f"{basename}.tex"
    tex_path.write_text(source, encoding="utf-8")
    rendered.tex_path = str(tex_path)

    engine = shutil.which("pdflatex") if compile_pdf else None
    if engine is None:
        if compile_pdf:
            rendered.notes.append("pdflatex not found; emitted source only")
        return rendered
    proc = subprocess.run(
        [engine, "-interaction=nonstopmode", "-halt-on-error", tex_path.name],
        cwd=out_dir,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    pdf_path = out_dir / f"{basename}.pdf"
    if proc.returncode == 0 and pdf_path.exists():
        rendered.pdf_path = str(pdf_path)
    else:
        rendered.notes.append(f"pdflatex exited {proc.returncode}; source kept")
    return rendered
