"""Operator CLI: run sessions, score masks, replay traces, serve the stub.

Exit codes: 0 success (replay: matched), 1 validation error, 2 runtime
error, 3 replay divergence.
"""

from __future__ import annotations

import argparse
import shlex
import sys

from .errors import (
    AllZeroVolumes,
    ExecutorCrashed,
    ManifestError,
    ProtocolVersionMismatch,
    ProviderError,
    VisionLoopError,
)
from .executor import SidecarExecutor, StubExecutor, serve_stub
from .manifest import load_manifest, load_mask_stats
from .providers import HttpProvider, ProviderScript, ScriptedProvider
from .router import extract_features, complexity_score, recommended_budget
from .runner import run_session
from .session import DEFAULT_HARD_CEILING
from .trace import SessionTrace, replay

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_DIVERGENCE = 3

DEFAULT_SIDECAR_CMD = "visionloop-sidecar"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visionloop",
        description="Iterative vision-language sessions with adaptive budgeting, "
        "replayable traces, and clinical reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one session from a case manifest")
    run_p.add_argument("manifest", help="path to the case manifest (JSON)")
    run_p.add_argument(
        "--provider",
        default="http",
        help="'http' (uses VISIONLOOP_* env vars) or 'scripted:<script.json>'",
    )
    router_group = run_p.add_mutually_exclusive_group()
    router_group.add_argument("--router", dest="router", action="store_true", default=True)
    router_group.add_argument("--no-router", dest="router", action="store_false")
    run_p.add_argument("--ceiling", type=int, default=DEFAULT_HARD_CEILING)
    run_p.add_argument("--trace-dir", default="traces")
    run_p.add_argument("--reports-dir", default="reports")
    report_group = run_p.add_mutually_exclusive_group()
    report_group.add_argument("--report", dest="report", action="store_true", default=True)
    report_group.add_argument("--no-report", dest="report", action="store_false")
    run_p.add_argument("--profile", choices=("neuro", "cxr"), default=None,
                       help="override the manifest's clinical profile")
    run_p.add_argument("--executor", choices=("stub", "sidecar"), default="stub")
    run_p.add_argument("--sidecar-cmd", default=DEFAULT_SIDECAR_CMD,
                       help="command line used to spawn the interpreter sidecar")

    score_p = sub.add_parser("score", help="print router features/score/budget for a mask")
    score_p.add_argument("stats_file", help="mask-statistics JSON file")

    replay_p = sub.add_parser("replay", help="re-run a trace and verify it matches")
    replay_p.add_argument("trace_file")
    replay_p.add_argument("--executor", choices=("stub", "sidecar"), default="stub")
    replay_p.add_argument("--sidecar-cmd", default=DEFAULT_SIDECAR_CMD)

    sub.add_parser("stub-serve", help="serve the stub executor over stdio frames")
    return parser


def _make_provider(spec: str):
    if spec == "http":
        return HttpProvider()
    if spec.startswith("scripted:"):
        return ScriptedProvider(ProviderScript.load(spec.split(":", 1)[1]))
    raise ManifestError(f"unknown provider spec {spec!r}")


def _make_executor(kind: str, sidecar_cmd: str):
    if kind == "sidecar":
        return SidecarExecutor(shlex.split(sidecar_cmd))
    return StubExecutor()


def cmd_run(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        if args.profile:
            manifest.profile = args.profile
        provider = _make_provider(args.provider)
        request = manifest.to_request(
            router_enabled=args.router, hard_ceiling=args.ceiling
        )
        request.validate()
    except (ManifestError, ProviderError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    executor = None
    try:
        executor = _make_executor(args.executor, args.sidecar_cmd)
        outcome, trace_path = run_session(
            request,
            provider,
            executor,
            trace_dir=args.trace_dir,
            report_enabled=args.report,
            gt_reference=manifest.gt_reference,
            reports_dir=args.reports_dir,
        )
    except (ProviderError, ExecutorCrashed, VisionLoopError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if executor is not None:
            executor.shutdown()

    result = outcome.result
    router = request.build_router()
    print(f"session trace: {trace_path}")
    print(f"  profile:     {request.clinical_profile}")
    if router is not None:
        print(f"  router:      budget {router.budget} (score {router.score:.4f})")
    else:
        print("  router:      disabled")
    print(f"  bound:       ceiling {request.hard_ceiling}")
    print(f"  iterations:  {result.iterations_used}")
    print(f"  termination: {result.termination.value}")
    usage = result.usage
    print(
        f"  usage:       {usage.input_tokens} input / {usage.output_tokens} output "
        f"tokens, {usage.subcall_count} sub-calls, {usage.wall_clock_s:.1f} s model time"
    )
    if outcome.report is not None:
        target = outcome.report.pdf_path or outcome.report.tex_path
        print(f"  report:      {target}")
        for note in outcome.report.notes:
            print(f"               ({note})")
    elif outcome.extraction_error:
        print(f"  report:      extraction failed: {outcome.extraction_error}")
    return EXIT_OK


def cmd_score(args) -> int:
    try:
        _, volumes = load_mask_stats(args.stats_file)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if sum(volumes) == 0:
        print("empty mask: all sub-region volumes are zero", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        features = extract_features(volumes)
    except (AllZeroVolumes, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    score = complexity_score(features)
    budget = recommended_budget(score)
    print(f"H  = {features.entropy_bits:.4f} bits")
    print(f"V  = {features.total_volume_cc:.4f} cc")
    print(f"R  = {features.present_count}")
    print(f"T  = {features.tiny_flag}")
    print(f"s  = {score:.4f}")
    print(f"n* = {budget}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        trace = SessionTrace.load(args.trace_file)
    except (OSError, ValueError, VisionLoopError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    executor = None
    try:
        executor = _make_executor(args.executor, args.sidecar_cmd)
        report = replay(trace, executor)
    except ProtocolVersionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except VisionLoopError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if executor is not None:
            executor.shutdown()
    if report.matched:
        print(f"replay matched: {len(trace.events)} events identical")
        return EXIT_OK
    print(f"replay diverged at seq {report.first_divergence}")
    for diff in report.field_diffs:
        print(f"  {diff}")
    return EXIT_DIVERGENCE


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "score":
        return cmd_score(args)
    if args.command == "replay":
        return cmd_replay(args)
    if args.command == "stub-serve":
        return serve_stub(sys.stdin, sys.stdout)
    return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
