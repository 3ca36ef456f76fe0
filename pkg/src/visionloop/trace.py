"""Append-only session audit trail with exact-replay verification.

On disk a trace is UTF-8 JSON lines: line 1 is the header (request
snapshot, config, versions), then one event per line with a strictly
increasing seq, then a footer holding the embedded provider script and the
sealed completion result. Events are schema-checked at append time and
flushed before the loop proceeds; after sealing, the file is immutable.

Replay re-runs the session from the header snapshot against the embedded
script and compares canonicalized event streams. Canonicalization strips
wall-clock fields (and artifact file paths, which depend on where the rerun
happens) and nothing else.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import SchemaViolation, SeqGap, TraceSealed, ProtocolVersionMismatch
from .executor import PROTOCOL_VERSION

TRACE_FORMAT_VERSION = "1"

EVENT_KINDS = (
    "SystemPrompt",
    "UserMessage",
    "ModelOutput",
    "CodeBlock",
    "ExecResult",
    "SubCall",
    "SubCallResult",
    "Warning",
    "Termination",
    "ReportArtifact",
)

# Required payload fields per kind; values are acceptable types.
_REQUIRED_FIELDS: dict[str, dict[str, tuple]] = {
    "SystemPrompt": {"text": (str,)},
    "UserMessage": {"role": (str,), "text": (str,), "image_count": (int,)},
    "ModelOutput": {"iteration": (int,), "text": (str,), "usage": (dict,)},
    "CodeBlock": {"iteration": (int,), "code": (str,)},
    "ExecResult": {
        "iteration": (int,),
        "stdout": (str,),
        "stderr": (str,),
        "new_vars": (list,),
        "final_signal": (dict, type(None)),
        "elapsed_ms": (int,),
    },
    "SubCall": {"iteration": (int,), "kind": (str,)},
    "SubCallResult": {"iteration": (int,), "usage": (dict,)},
    "Warning": {"code": (str,), "message": (str,)},
    "Termination": {
        "kind": (str,),
        "iterations_used": (int,),
        "usage": (dict,),
        "answer": (str,),
    },
    "ReportArtifact": {"variant": (str,)},
}

# Keys stripped (recursively) before equality comparison: timing, plus
# artifact output locations which vary with the rerun environment.
CANONICAL_EXCLUDED_KEYS = frozenset(
    {"monotonic_time_ms", "elapsed_ms", "wall_clock_s", "tex_path", "pdf_path"}
)


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    payload: dict
    monotonic_time_ms: int

    def as_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "monotonic_time_ms": self.monotonic_time_ms,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TraceEvent":
        return cls(raw["seq"], raw["kind"], raw["payload"], raw.get("monotonic_time_ms", 0))


def validate_payload(kind: str, payload: dict) -> None:
    if kind not in EVENT_KINDS:
        raise SchemaViolation(f"unknown event kind {kind!r}")
    if not isinstance(payload, dict):
        raise SchemaViolation(f"{kind} payload must be a mapping")
    for name, types in _REQUIRED_FIELDS[kind].items():
        if name not in payload:
            raise SchemaViolation(f"{kind} payload missing field {name!r}")
        if not isinstance(payload[name], types):
            raise SchemaViolation(
                f"{kind} payload field {name!r} has type "
                f"{type(payload[name]).__name__}, expected one of "
                f"{tuple(t.__name__ for t in types)}"
            )


def _strip_excluded(value):
    if isinstance(value, dict):
        return {
            k: _strip_excluded(v)
            for k, v in value.items()
            if k not in CANONICAL_EXCLUDED_KEYS
        }
    if isinstance(value, list):
        return [_strip_excluded(v) for v in value]
    return value


def canonicalize_event(event: TraceEvent) -> dict:
    """Timing-free view of an event; idempotent and order-preserving."""
    return {
        "seq": event.seq,
        "kind": event.kind,
        "payload": _strip_excluded(event.payload),
    }


def canonical_stream(events: list[TraceEvent]) -> list[dict]:
    return [canonicalize_event(e) for e in events]


class TraceLog:
    """In-memory append-only event log with schema and seq validation."""

    def __init__(self):
        self.events: list[TraceEvent] = []
        self._origin = time.monotonic()
        self._sealed = False
        self.footer: Optional[dict] = None

    @property
    def sealed(self) -> bool:
        return self._sealed

    def append_event(self, event: TraceEvent) -> TraceEvent:
        if self._sealed:
            raise TraceSealed("trace is sealed; no further events may be appended")
        expected = self.events[-1].seq + 1 if self.events else 0
        if event.seq != expected:
            raise SeqGap(f"event seq {event.seq}, expected {expected}")
        validate_payload(event.kind, event.payload)
        self.events.append(event)
        self._write(event)
        return event

    def emit(self, kind: str, payload: dict) -> TraceEvent:
        seq = self.events[-1].seq + 1 if self.events else 0
        elapsed_ms = int((time.monotonic() - self._origin) * 1000)
        return self.append_event(TraceEvent(seq, kind, payload, elapsed_ms))

    def seal(self, provider_script: dict, result: dict) -> None:
        if self._sealed:
            raise TraceSealed("trace already sealed")
        self.footer = {"provider_script": provider_script, "result": result}
        self._write_footer(self.footer)
        self._sealed = True

    # hooks for the file-backed subclass
    def _write(self, event: TraceEvent) -> None:
        pass

    def _write_footer(self, footer: dict) -> None:
        pass


class FileTraceWriter(TraceLog):
    """Durable JSONL trace writer: header first, flush on every append."""

    def __init__(self, path, header: dict):
        super().__init__()
        self.path = str(path)
        self.header = header
        self._fh = open(self.path, "w", encoding="utf-8")
        self._fh.write(json.dumps({"header": header}, ensure_ascii=False) + "\n")
        self._fh.flush()

    def _write(self, event: TraceEvent) -> None:
        self._fh.write(json.dumps(event.as_dict(), ensure_ascii=False) + "\n")
        self._fh.flush()

    def _write_footer(self, footer: dict) -> None:
        self._fh.write(json.dumps({"footer": footer}, ensure_ascii=False) + "\n")
        self._fh.flush()
        self._fh.close()


def build_header(session_id: str, request_snapshot: dict, config: dict) -> dict:
    return {
        "session_id": session_id,
        "created_unix": time.time(),
        "request": request_snapshot,
        "config": config,
        "versions": {
            "trace_format": TRACE_FORMAT_VERSION,
            "executor_protocol": PROTOCOL_VERSION,
        },
    }


@dataclass
class SessionTrace:
    """A loaded trace: everything needed to re-run without a network."""

    header: dict
    events: list[TraceEvent]
    footer: Optional[dict] = None

    @classmethod
    def load(cls, path) -> "SessionTrace":
        header: Optional[dict] = None
        events: list[TraceEvent] = []
        footer: Optional[dict] = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                if "header" in raw:
                    header = raw["header"]
                elif "footer" in raw:
                    footer = raw["footer"]
                else:
                    events.append(TraceEvent.from_dict(raw))
        if header is None:
            raise SchemaViolation(f"trace {path} has no header line")
        return cls(header=header, events=events, footer=footer)

    @classmethod
    def from_log(cls, header: dict, log: TraceLog) -> "SessionTrace":
        return cls(header=header, events=list(log.events), footer=log.footer)

    @property
    def provider_script(self) -> dict:
        return (self.footer or {}).get("provider_script", {"responses": []})

    @property
    def result(self) -> dict:
        return (self.footer or {}).get("result", {})


@dataclass
class ReplayReport:
    matched: bool
    first_divergence: Optional[int] = None
    field_diffs: list[str] = field(default_factory=list)


def _diff_paths(prefix: str, a, b, out: list[str], limit: int = 8) -> None:
    if len(out) >= limit:
        return
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) | set(b)):
            _diff_paths(f"{prefix}.{key}", a.get(key), b.get(key), out, limit)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(f"{prefix}: list length {len(a)} != {len(b)}")
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _diff_paths(f"{prefix}[{i}]", x, y, out, limit)
    elif a != b:
        out.append(f"{prefix}: {a!r} != {b!r}")


def compare_streams(
    recorded: list[TraceEvent], replayed: list[TraceEvent]
) -> ReplayReport:
    """First-divergence comparison of two canonicalized event streams."""
    a = canonical_stream(recorded)
    b = canonical_stream(replayed)
    for i in range(min(len(a), len(b))):
        if a[i] != b[i]:
            diffs: list[str] = []
            _diff_paths(f"seq {a[i]['seq']}", a[i], b[i], diffs)
            return ReplayReport(False, first_divergence=a[i]["seq"], field_diffs=diffs)
    if len(a) != len(b):
        seq = a[len(b)]["seq"] if len(a) > len(b) else b[len(a)]["seq"]
        return ReplayReport(
            False,
            first_divergence=seq,
            field_diffs=[f"event count {len(a)} != {len(b)}"],
        )
    return ReplayReport(True)


def replay(trace: SessionTrace, executor) -> ReplayReport:
    """Re-run a recorded session against its embedded script and compare.

    The rerun uses a fresh executor supplied by the caller and renders no
    output files; equality is judged on canonicalized events only.
    """
    recorded_protocol = trace.header.get("versions", {}).get("executor_protocol")
    if recorded_protocol != PROTOCOL_VERSION:
        raise ProtocolVersionMismatch(
            f"trace recorded under {recorded_protocol!r}, current {PROTOCOL_VERSION!r}"
        )
    from .providers import ProviderScript, ScriptedProvider
    from .runner import run_case
    from .session import SessionRequest

    request = SessionRequest.from_snapshot(trace.header["request"])
    provider = ScriptedProvider(ProviderScript.from_dict(trace.provider_script))
    log = TraceLog()
    config = trace.header.get("config", {})
    run_case(
        request,
        provider,
        executor,
        log,
        report_enabled=bool(config.get("report_enabled")),
        gt_reference=config.get("gt_reference"),
        render_outputs=False,
    )
    return compare_streams(trace.events, log.events)
