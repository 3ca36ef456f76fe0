"""Full-pipeline orchestration: loop, report stage, trace sealing."""

from __future__ import annotations

import hashlib
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ExecutorCrashed, ProviderError, UnparseableExtraction
from .profiles import PROFILE_NONE
from .providers import RecordingProvider
from .report import ExecutionStats, RenderedReport, ReportSchema, extract_sections, render
from .session import CompletionResult, SessionRequest, run_completion
from .trace import FileTraceWriter, TraceLog, build_header


@dataclass
class CaseOutcome:
    result: CompletionResult
    report_schema: Optional[ReportSchema] = None
    report: Optional[RenderedReport] = None
    extraction_error: Optional[str] = None


def run_case(
    request: SessionRequest,
    provider,
    executor,
    sink: TraceLog,
    *,
    report_enabled: bool = False,
    gt_reference: Optional[str] = None,
    render_outputs: bool = True,
    reports_dir: Optional[str] = None,
    basename: str = "report",
    compile_pdf: bool = True,
) -> CaseOutcome:
    """Run the loop and (optionally) the report stage, then seal the trace.

    The provider is wrapped in a recorder so the sealed trace embeds the
    full response script; a partial trace is sealed (with the error noted)
    even when the provider or executor dies mid-session.
    """
    if getattr(provider, "event_sink", "absent") is None:
        provider.event_sink = lambda code, message: sink.emit(
            "Warning", {"code": code, "message": message}
        )
    recorder = RecordingProvider(provider)
    router = request.build_router()
    try:
        result = run_completion(request, recorder, executor, router=router, sink=sink)
    except (ProviderError, ExecutorCrashed) as exc:
        if not sink.sealed:
            sink.seal(
                recorder.script().as_dict(),
                {"error": type(exc).__name__, "message": str(exc)},
            )
        raise

    outcome = CaseOutcome(result=result)
    if report_enabled and request.clinical_profile != PROFILE_NONE:
        _report_stage(
            outcome,
            request,
            recorder,
            sink,
            gt_reference=gt_reference,
            render_outputs=render_outputs,
            reports_dir=reports_dir,
            basename=basename,
            compile_pdf=compile_pdf,
        )

    sink.seal(recorder.script().as_dict(), result.as_dict())
    return outcome


def _report_stage(
    outcome: CaseOutcome,
    request: SessionRequest,
    provider,
    sink: TraceLog,
    *,
    gt_reference: Optional[str],
    render_outputs: bool,
    reports_dir: Optional[str],
    basename: str,
    compile_pdf: bool,
) -> None:
    variant = request.clinical_profile
    result = outcome.result
    try:
        schema = extract_sections(result.answer, variant, provider, sink=sink)
    except UnparseableExtraction as exc:
        outcome.extraction_error = str(exc)
        sink.emit(
            "Warning",
            {"code": "unparseable-extraction", "message": str(exc)},
        )
        sink.emit(
            "ReportArtifact",
            {
                "variant": variant,
                "extraction_error": str(exc),
                "raw_synthesis": result.answer,
            },
        )
        return

    stats = ExecutionStats.from_completion(result)
    rendered = render(
        schema,
        stats,
        gt_reference,
        output_dir=reports_dir if render_outputs else None,
        basename=basename,
        compile_pdf=compile_pdf and render_outputs,
    )
    outcome.report_schema = schema
    outcome.report = rendered
    sink.emit(
        "ReportArtifact",
        {
            "variant": variant,
            "sections": dict(schema.sections),
            "stats_line": stats.stats_line(),
            "source_sha256": hashlib.sha256(
                rendered.source_text.encode("utf-8")
            ).hexdigest(),
            "tex_path": rendered.tex_path,
            "pdf_path": rendered.pdf_path,
        },
    )


def run_session(
    request: SessionRequest,
    provider,
    executor,
    *,
    trace_dir: str,
    report_enabled: bool = False,
    gt_reference: Optional[str] = None,
    reports_dir: Optional[str] = None,
    session_id: Optional[str] = None,
    compile_pdf: bool = True,
) -> tuple[CaseOutcome, str]:
    """File-backed session: writes traces/<session-id>.trace and reports."""
    session_id = session_id or uuid.uuid4().hex[:12]
    trace_path = Path(trace_dir)
    trace_path.mkdir(parents=True, exist_ok=True)
    trace_file = trace_path / f"{session_id}.trace"
    header = build_header(
        session_id,
        request.snapshot(),
        {"report_enabled": report_enabled, "gt_reference": gt_reference},
    )
    writer = FileTraceWriter(trace_file, header)
    outcome = run_case(
        request,
        provider,
        executor,
        writer,
        report_enabled=report_enabled,
        gt_reference=gt_reference,
        reports_dir=reports_dir or str(trace_path.parent / "reports"),
        basename=session_id,
        compile_pdf=compile_pdf,
    )
    return outcome, str(trace_file)
