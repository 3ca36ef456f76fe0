"""The iterative generate-execute completion loop.

Each turn: call the model on the accumulated history, extract the (at most
one) fenced code block, execute it in the persistent sandbox while routing
sub-calls back through the provider, then append output to the history.
The loop honors FINAL / FINAL_VAR immediately, lets the router cut the
session on stall once its budget is spent, recovers a computed `report`
variable when the model forgot to return it, and otherwise falls back to
one direct answer call at the hard ceiling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import EmptyHistory
from .executor import ExecResult
from .images import ImageRecord, ImageTable
from .messages import (
    Message,
    ROLE_ASSISTANT,
    ROLE_SYSTEM,
    ROLE_TOOL_OUTPUT,
    ROLE_USER,
)
from .parsing import FinalKind, FinalSignal, detect_final_directive, extract_code_block
from .profiles import (
    DEFAULT_MASK_LABELS,
    MASK_LABEL_NAMES,
    PROFILE_CXR,
    PROFILE_NEURO,
    PROFILE_NONE,
    default_answer_prompt,
    iteration_prompt,
    profile,
    system_prompt,
)
from .providers import Usage
from .router import (
    ContinueReason,
    ProductivityRecord,
    RecursionRouter,
    assess_productivity,
)
from .subcalls import SubCallDispatcher
from .trace import TraceLog

DEFAULT_HARD_CEILING = 12

# History keeps executor output verbatim up to this many characters.
HISTORY_OUTPUT_LIMIT = 8000
HISTORY_ELISION_MARKER = "\n...[output elided]"

REPORT_VARIABLE = "report"

KNOWN_PROFILES = (PROFILE_NEURO, PROFILE_CXR, PROFILE_NONE)


class Termination(str, Enum):
    FINAL = "Final"
    FINAL_VAR = "FinalVar"
    ROUTER_STALL = "RouterStall"
    CEILING_DEFAULT = "CeilingDefault"
    RECOVERED_REPORT = "RecoveredReport"


@dataclass
class SessionRequest:
    prompt: str
    images: list[ImageRecord] = field(default_factory=list)
    image_labels: list[str] = field(default_factory=list)
    router_enabled: bool = True
    hard_ceiling: int = DEFAULT_HARD_CEILING
    clinical_profile: str = PROFILE_NONE
    mask_stats: Optional[list[float]] = None
    mask_labels: tuple = DEFAULT_MASK_LABELS

    def validate(self) -> None:
        if self.hard_ceiling < 1:
            raise ValueError("hard_ceiling must be at least 1")
        if self.clinical_profile not in KNOWN_PROFILES:
            raise ValueError(f"unknown clinical profile {self.clinical_profile!r}")
        if self.image_labels and len(self.image_labels) != len(self.images):
            raise ValueError("image_labels must match images one-to-one")
        if (
            self.router_enabled
            and self.clinical_profile == PROFILE_NEURO
            and self.mask_stats is None
        ):
            raise ValueError("neuro sessions with the router enabled need mask_stats")

    def snapshot(self) -> dict:
        return {
            "prompt": self.prompt,
            "images": [rec.as_context_dict() for rec in self.images],
            "image_labels": list(self.image_labels),
            "router_enabled": self.router_enabled,
            "hard_ceiling": self.hard_ceiling,
            "clinical_profile": self.clinical_profile,
            "mask_stats": list(self.mask_stats) if self.mask_stats is not None else None,
            "mask_labels": list(self.mask_labels),
        }

    @classmethod
    def from_snapshot(cls, raw: dict) -> "SessionRequest":
        return cls(
            prompt=raw["prompt"],
            images=[ImageRecord.from_dict(d) for d in raw.get("images", [])],
            image_labels=list(raw.get("image_labels", [])),
            router_enabled=bool(raw.get("router_enabled", True)),
            hard_ceiling=int(raw.get("hard_ceiling", DEFAULT_HARD_CEILING)),
            clinical_profile=raw.get("clinical_profile", PROFILE_NONE),
            mask_stats=raw.get("mask_stats"),
            mask_labels=tuple(raw.get("mask_labels", DEFAULT_MASK_LABELS)),
        )

    def build_router(self) -> Optional[RecursionRouter]:
        if self.router_enabled and self.mask_stats is not None:
            return RecursionRouter(self.mask_stats)
        return None


@dataclass
class IterationRecord:
    index: int
    model_output: str
    code: Optional[str]
    exec_result: Optional[ExecResult]
    productivity: ProductivityRecord
    final_signal: Optional[FinalSignal]


@dataclass
class CompletionResult:
    answer: str
    termination: Termination
    iterations_used: int
    usage: Usage
    wall_clock_s: float
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "answer": self.answer,
            "termination": self.termination.value,
            "iterations_used": self.iterations_used,
            "usage": self.usage.as_dict(),
            "wall_clock_s": self.wall_clock_s,
            "stop_reason": self.stop_reason,
        }


# ---------------------------------------------------------------------------
# History construction
# ---------------------------------------------------------------------------

def mask_stats_text(volumes, labels) -> str:
    total = float(sum(volumes))
    lines = ["Ground-truth mask statistics:"]
    for label, volume in zip(labels, volumes):
        full_name = MASK_LABEL_NAMES.get(label, label)
        share = (volume / total * 100.0) if total > 0 else 0.0
        lines.append(f"- {label} - {full_name}: {volume:.2f} cc ({share:.0f}%)")
    lines.append(f"- Total: {total:.2f} cc")
    return "\n".join(lines)


def _guidance_text(request: SessionRequest) -> str:
    if request.clinical_profile == PROFILE_NEURO:
        prof = profile(PROFILE_NEURO)
    else:
        prof = profile(PROFILE_CXR, request.image_labels or None)
    labels = request.image_labels or [label for label, _ in prof.units]
    by_label = dict(prof.units)
    lines = ["Per-image analysis protocol (one targeted describe_image call each):"]
    for idx, label in enumerate(labels):
        if label in by_label:
            lines.append(f"- Image {idx} ({label}): {by_label[label]}")
    for label_a, label_b, pair_prompt in prof.cross_modal_pairs:
        if label_a in labels and label_b in labels:
            ia, ib = labels.index(label_a), labels.index(label_b)
            lines.append(
                f"Cross-modal comparison (images {ia} and {ib}: {label_a} vs "
                f"{label_b}): {pair_prompt}"
            )
    synthesis = prof.synthesis_template.replace("{evidence}", "").strip()
    if synthesis:
        lines.append(f"Synthesis: {synthesis}")
    return "\n".join(lines)


def metadata_text(request: SessionRequest) -> str:
    parts = [f"Environment: {len(request.images)} context image(s)"]
    if request.image_labels:
        parts.append(f"({', '.join(request.image_labels)})")
    parts.append(f"- clinical profile: {request.clinical_profile}.")
    return " ".join(parts)


def compose_user_text(request: SessionRequest) -> str:
    blocks = [request.prompt]
    if request.clinical_profile != PROFILE_NONE:
        blocks.append(_guidance_text(request))
    if request.mask_stats is not None:
        blocks.append(mask_stats_text(request.mask_stats, request.mask_labels))
    return "\n\n".join(blocks)


def build_initial_history(request: SessionRequest) -> list[Message]:
    """System prompt, environment metadata, then the one multimodal message."""
    return [
        Message(ROLE_SYSTEM, system_prompt()),
        Message(ROLE_SYSTEM, metadata_text(request)),
        Message(
            ROLE_USER,
            compose_user_text(request),
            image_indices=tuple(range(len(request.images))),
        ),
    ]


def render_exec_output(result: ExecResult, limit: int = HISTORY_OUTPUT_LIMIT) -> str:
    text = result.stdout
    if result.stderr:
        if text and not text.endswith("\n"):
            text += "\n"
        text += "[stderr]\n" + result.stderr
    if len(text) > limit:
        text = text[:limit] + HISTORY_ELISION_MARKER
    return text


# ---------------------------------------------------------------------------
# Loop operations
# ---------------------------------------------------------------------------

def fetch_variable(executor, name: str) -> Optional[str]:
    """Full textual value of a sandbox variable, or None if absent/blank."""
    view = executor.snapshot(full=(name,))
    value = view.full.get(name)
    if value is not None and value.strip():
        return value
    return None


def recover_report_variable(executor) -> Optional[str]:
    return fetch_variable(executor, REPORT_VARIABLE)


def default_answer(history, provider, *, table=None, usage=None, sink=None) -> str:
    """One last provider call asking for a direct answer from the evidence."""
    if not history:
        raise EmptyHistory("cannot ask for a default answer with no history")
    instruction = Message(ROLE_USER, default_answer_prompt())
    if sink is not None:
        sink.emit(
            "UserMessage", {"role": "user", "text": instruction.text, "image_count": 0}
        )
    reply = provider.complete(
        list(history) + [instruction], table=table, include_images=False, origin="root"
    )
    if usage is not None:
        usage.add_reply(reply)
    if sink is not None:
        sink.emit(
            "ModelOutput",
            {"iteration": -1, "text": reply.text, "usage": reply.usage_dict()},
        )
    return reply.text


def _productivity(
    exec_result: Optional[ExecResult], subcall_count: int
) -> ProductivityRecord:
    if exec_result is None:
        return ProductivityRecord(subcall_count, 0, 0)
    nontrivial = sum(1 for v in exec_result.new_vars if v.preview != "")
    return ProductivityRecord(subcall_count, len(exec_result.stdout), nontrivial)


def run_completion(
    request: SessionRequest,
    provider,
    executor,
    router: Optional[RecursionRouter] = None,
    sink: Optional[TraceLog] = None,
) -> CompletionResult:
    """Run one full session; every event lands in the sink before return."""
    request.validate()
    if sink is None:
        sink = TraceLog()
    started = time.monotonic()

    table = ImageTable(request.images)
    history = build_initial_history(request)
    sink.emit("SystemPrompt", {"text": history[0].text})
    sink.emit(
        "UserMessage", {"role": "system", "text": history[1].text, "image_count": 0}
    )
    sink.emit(
        "UserMessage",
        {"role": "user", "text": history[2].text, "image_count": len(request.images)},
    )

    usage = Usage()
    dispatcher = SubCallDispatcher(table, provider, usage, sink)
    executor.init(request.images, history[2].text)

    productivity_flags: list[bool] = []
    records: list[IterationRecord] = []
    answer: Optional[str] = None
    termination: Optional[Termination] = None
    stop_reason: Optional[str] = None
    iterations_used = 0

    for index in range(request.hard_ceiling):
        iterations_used = index + 1
        dispatcher.iteration = index
        if index > 0:
            turn_prompt = iteration_prompt(index)
            history.append(Message(ROLE_USER, turn_prompt))
            sink.emit(
                "UserMessage", {"role": "user", "text": turn_prompt, "image_count": 0}
            )

        reply = provider.complete(
            history, table=table, include_images=(index == 0), origin="root"
        )
        usage.add_reply(reply)
        sink.emit(
            "ModelOutput",
            {"iteration": index, "text": reply.text, "usage": reply.usage_dict()},
        )
        history.append(Message(ROLE_ASSISTANT, reply.text))

        code, warnings = extract_code_block(reply.text)
        for warn_code, warn_msg in warnings:
            sink.emit("Warning", {"code": warn_code, "message": warn_msg})

        exec_result: Optional[ExecResult] = None
        subcalls_before = dispatcher.count
        if code is not None:
            sink.emit("CodeBlock", {"iteration": index, "code": code})
            exec_result = executor.run(code, dispatcher)
            sink.emit(
                "ExecResult", {"iteration": index, **exec_result.as_frame_payload()}
            )
            history.append(Message(ROLE_TOOL_OUTPUT, render_exec_output(exec_result)))

        productivity = _productivity(exec_result, dispatcher.count - subcalls_before)
        exec_signal = exec_result.final_signal if exec_result else None
        final, final_warnings = detect_final_directive(reply.text, exec_signal)
        for warn_code, warn_msg in final_warnings:
            sink.emit("Warning", {"code": warn_code, "message": warn_msg})
        records.append(
            IterationRecord(index, reply.text, code, exec_result, productivity, final)
        )

        if final is not None:
            if final.kind == FinalKind.FINAL_TEXT:
                answer = final.payload
                termination = Termination.FINAL
                break
            value = fetch_variable(executor, final.payload)
            if value is not None:
                answer = value
                termination = Termination.FINAL_VAR
                break
            sink.emit(
                "Warning",
                {
                    "code": "unresolvable-final-var",
                    "message": (
                        f"FINAL_VAR({final.payload!r}) names a missing or empty "
                        "variable; continuing"
                    ),
                },
            )

        productivity_flags.append(assess_productivity(productivity))
        if router is not None:
            decision = router.should_continue(index, productivity_flags)
            if not decision.proceed:
                stop_reason = decision.reason.value
                recovered = recover_report_variable(executor)
                if recovered is not None:
                    answer = recovered
                    termination = Termination.RECOVERED_REPORT
                else:
                    answer = default_answer(
                        history, provider, table=table, usage=usage, sink=sink
                    )
                    termination = Termination.ROUTER_STALL
                break

    if termination is None:
        stop_reason = ContinueReason.BUDGET_EXHAUSTED.value
        recovered = recover_report_variable(executor)
        if recovered is not None:
            answer = recovered
            termination = Termination.RECOVERED_REPORT
        else:
            answer = default_answer(
                history, provider, table=table, usage=usage, sink=sink
            )
            termination = Termination.CEILING_DEFAULT

    if not answer:
        answer = "[no answer produced]"

    result = CompletionResult(
        answer=answer,
        termination=termination,
        iterations_used=iterations_used,
        usage=usage,
        wall_clock_s=time.monotonic() - started,
        records=records,
        stop_reason=stop_reason,
    )
    sink.emit(
        "Termination",
        {
            "kind": termination.value,
            "reason": stop_reason,
            "iterations_used": iterations_used,
            "usage": usage.as_dict(),
            "answer": answer,
        },
    )
    return result
