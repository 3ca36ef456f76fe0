"""Executor protocol and the in-process stub executor.

The session loop talks to an executor through four operations: init (inject
context and image records), run (execute one code block, round-tripping any
sub-calls through a callback), snapshot (list non-baseline variables, with
optional full values), and shutdown. Two implementations exist:

* StubExecutor (here): interprets only the restricted command subset
  documented in docs/protocol.md — printing, literal binds, query
  sub-calls, FINAL signals. The whole primary test suite runs on it.
* the interpreter sidecar (separate package): a real Python process driven
  over newline-delimited JSON frames, version "rvlm-proto/1".

Both speak the identical frame protocol; serve_stub() exposes the stub over
stdio so the two can be differential-tested frame for frame.
"""

from __future__ import annotations

import ast
import json
import subprocess
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .errors import ExecutorCrashed, ProtocolVersionMismatch
from .images import ImageRecord
from .parsing import FinalKind, FinalSignal
from .subcalls import SubCallKind, SubCallRequest

PROTOCOL_VERSION = "rvlm-proto/1"

# Names injected at init; never reported as new variables.
BASELINE_NAMES = frozenset(
    {
        "context",
        "context_images",
        "llm_query",
        "llm_query_with_images",
        "llm_query_batched_with_images",
        "describe_image",
        "FINAL",
        "FINAL_VAR",
    }
)

PREVIEW_LIMIT = 500
TRUNCATION_MARKER = "...[truncated]"

SANDBOX_FILENAME = "<sandbox>"

SubCallHandler = Callable[[SubCallRequest], Union[str, list]]


@dataclass(frozen=True)
class VarInfo:
    name: str
    type_label: str
    preview: str

    def as_triple(self) -> list:
        return [self.name, self.type_label, self.preview]


@dataclass
class ExecResult:
    stdout: str
    stderr: str
    new_vars: list[VarInfo]
    final_signal: Optional[FinalSignal]
    elapsed_ms: int

    def as_frame_payload(self) -> dict:
        return {
            "stdout": self.stdout,
            "stderr": self.stderr,
            "new_vars": [v.as_triple() for v in self.new_vars],
            "final_signal": self.final_signal.as_dict() if self.final_signal else None,
            "elapsed_ms": self.elapsed_ms,
        }

    @classmethod
    def from_frame_payload(cls, payload: dict) -> "ExecResult":
        return cls(
            stdout=payload["stdout"],
            stderr=payload["stderr"],
            new_vars=[VarInfo(*triple) for triple in payload["new_vars"]],
            final_signal=FinalSignal.from_dict(payload.get("final_signal")),
            elapsed_ms=int(payload.get("elapsed_ms", 0)),
        )


@dataclass
class SnapshotView:
    vars: list[VarInfo]
    full: dict = field(default_factory=dict)


def safe_str(value) -> str:
    try:
        return str(value)
    except Exception:
        return f"<unprintable {type(value).__name__}>"


def truncate_preview(text: str) -> str:
    if len(text) > PREVIEW_LIMIT:
        return text[:PREVIEW_LIMIT] + TRUNCATION_MARKER
    return text


def render_exception(exc: BaseException) -> str:
    """Canonical stderr rendering: the final 'Type: message' line(s) only.

    Both executor implementations use this form so their frames compare
    equal; full tracebacks would leak interpreter-specific line numbers.
    """
    return "".join(traceback.format_exception_only(type(exc), exc))


def collect_new_vars(
    namespace: dict, previous_renders: dict
) -> tuple[list[VarInfo], dict]:
    """Diff the namespace against the last reported renders.

    Reports names that are new or whose textual rendering changed, sorted by
    name; baseline and underscore-prefixed names never appear.
    """
    current: dict = {}
    infos: list[VarInfo] = []
    for name in sorted(namespace):
        if name.startswith("_") or name in BASELINE_NAMES:
            continue
        text = safe_str(namespace[name])
        current[name] = text
        if previous_renders.get(name) != text:
            infos.append(VarInfo(name, type(namespace[name]).__name__, truncate_preview(text)))
    return infos, current


# ---------------------------------------------------------------------------
# Stub executor: restricted statement interpreter
# ---------------------------------------------------------------------------

class _FinalRaised(Exception):
    def __init__(self, signal: FinalSignal):
        super().__init__(signal.payload)
        self.signal = signal


class UnsupportedStubCode(RuntimeError):
    """Statement outside the stub-expressible subset."""


_QUERY_PARAMS = {
    "describe_image": ("index", "prompt"),
    "llm_query": ("prompt",),
    "llm_query_with_images": ("prompt", "image_indices", "image_sources"),
    "llm_query_batched_with_images": ("prompts", "image_indices", "image_sources"),
    "FINAL": ("text",),
    "FINAL_VAR": ("name",),
}


class StubExecutor:
    """Minimal in-process executor speaking the sidecar protocol semantics.

    Supports exactly: print with literal/variable arguments, binding a name
    to a literal (or another name, or a query result, or a + concatenation),
    the four query bindings, and FINAL / FINAL_VAR. Anything else raises in
    the sandbox. Namespace persists across run() calls.
    """

    def __init__(self) -> None:
        self._ns: dict = {}
        self._renders: dict = {}
        self._inited = False

    # -- executor interface -------------------------------------------------

    def init(self, images: Sequence[ImageRecord], context_text: str) -> None:
        self._ns = {
            "context": context_text,
            "context_images": [rec.as_context_dict() for rec in images],
        }
        self._renders = {}
        self._inited = True

    def run(self, code: str, on_subcall: SubCallHandler) -> ExecResult:
        if not self._inited:
            raise ExecutorCrashed("executor used before init")
        started = time.monotonic()
        out: list[str] = []
        stderr = ""
        final: Optional[FinalSignal] = None
        try:
            tree = ast.parse(code, filename=SANDBOX_FILENAME)
        except SyntaxError as exc:
            stderr = render_exception(exc)
        else:
            try:
                for stmt in tree.body:
                    self._exec_stmt(stmt, out, on_subcall)
            except _FinalRaised as sig:
                final = sig.signal
            except Exception as exc:  # rendered, never fatal to the executor
                stderr = render_exception(exc)
        new_vars, self._renders = collect_new_vars(self._ns, self._renders)
        elapsed_ms = int((time.monotonic() - started) * 1000)
        return ExecResult("".join(out), stderr, new_vars, final, elapsed_ms)

    def snapshot(self, full: Sequence[str] = ()) -> SnapshotView:
        infos = [
            VarInfo(name, type(self._ns[name]).__name__, truncate_preview(safe_str(self._ns[name])))
            for name in sorted(self._ns)
            if not name.startswith("_") and name not in BASELINE_NAMES
        ]
        full_map = {
            name: safe_str(self._ns[name]) for name in full if name in self._ns
        }
        return SnapshotView(infos, full_map)

    def shutdown(self) -> None:
        pass

    # -- statement interpreter ----------------------------------------------

    def _exec_stmt(self, stmt: ast.stmt, out: list[str], on_subcall: SubCallHandler) -> None:
        if isinstance(stmt, ast.Pass):
            return
        if isinstance(stmt, ast.Assign):
            if len(stmt.targets) != 1 or not isinstance(stmt.targets[0], ast.Name):
                raise UnsupportedStubCode(
                    f"line {stmt.lineno}: only single-name assignment is supported"
                )
            self._ns[stmt.targets[0].id] = self._eval(stmt.value, out, on_subcall)
            return
        if isinstance(stmt, ast.Expr):
            self._eval(stmt.value, out, on_subcall)
            return
        raise UnsupportedStubCode(
            f"line {stmt.lineno}: {type(stmt).__name__} is outside the stub subset"
        )

    def _eval(self, node: ast.expr, out: list[str], on_subcall: SubCallHandler):
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in self._ns:
                raise NameError(f"name '{node.id}' is not defined")
            return self._ns[node.id]
        if isinstance(node, (ast.List, ast.Tuple)):
            return [self._eval(item, out, on_subcall) for item in node.elts]
        if isinstance(node, ast.Dict):
            return {
                self._eval(k, out, on_subcall): self._eval(v, out, on_subcall)
                for k, v in zip(node.keys, node.values)
            }
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -self._eval(node.operand, out, on_subcall)
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Add):
            return self._eval(node.left, out, on_subcall) + self._eval(
                node.right, out, on_subcall
            )
        if isinstance(node, ast.Call):
            return self._call(node, out, on_subcall)
        raise UnsupportedStubCode(
            f"line {node.lineno}: {type(node).__name__} expression is outside the stub subset"
        )

    def _call(self, node: ast.Call, out: list[str], on_subcall: SubCallHandler):
        if not isinstance(node.func, ast.Name):
            raise UnsupportedStubCode(f"line {node.lineno}: only bare-name calls are supported")
        name = node.func.id
        args = [self._eval(a, out, on_subcall) for a in node.args]
        kwargs = {
            kw.arg: self._eval(kw.value, out, on_subcall)
            for kw in node.keywords
            if kw.arg is not None
        }
        if name == "print":
            if kwargs:
                raise UnsupportedStubCode(f"line {node.lineno}: print keywords unsupported")
            out.append(" ".join(safe_str(a) for a in args) + "\n")
            return None
        if name not in _QUERY_PARAMS:
            raise NameError(f"name '{name}' is not defined")
        bound = self._bind_params(name, args, kwargs, node.lineno)
        return self._invoke(name, bound, on_subcall)

    @staticmethod
    def _bind_params(name: str, args: list, kwargs: dict, lineno: int) -> dict:
        params = _QUERY_PARAMS[name]
        if len(args) > len(params):
            raise TypeError(f"{name}() takes at most {len(params)} arguments")
        bound = dict(zip(params, args))
        for key, value in kwargs.items():
            if key not in params:
                raise TypeError(f"{name}() got an unexpected keyword argument '{key}'")
            if key in bound:
                raise TypeError(f"{name}() got multiple values for argument '{key}'")
            bound[key] = value
        return bound

    def _invoke(self, name: str, bound: dict, on_subcall: SubCallHandler):
        if name == "FINAL":
            if "text" not in bound:
                raise TypeError("FINAL() missing required argument: 'text'")
            raise _FinalRaised(FinalSignal(FinalKind.FINAL_TEXT, safe_str(bound["text"])))
        if name == "FINAL_VAR":
            var = bound.get("name")
            if not isinstance(var, str):
                raise TypeError("FINAL_VAR expects the variable name as a string")
            if var not in self._ns:
                raise NameError(f"name '{var}' is not defined")
            raise _FinalRaised(FinalSignal(FinalKind.FINAL_VAR, var))
        request = build_subcall_request(name, bound)
        return self._dispatch(request, on_subcall)

    @staticmethod
    def _dispatch(request: SubCallRequest, on_subcall: SubCallHandler):
        try:
            return on_subcall(request)
        except Exception as exc:
            # Surfaces inside the sandbox exactly like the sidecar's bindings.
            raise RuntimeError(str(exc)) from None

    # -- test convenience ---------------------------------------------------

    def set_variable(self, name: str, value) -> None:
        self._ns[name] = value


def build_subcall_request(binding: str, bound: dict) -> SubCallRequest:
    """Map a query-binding invocation onto a SubCallRequest.

    Shared construction rules for both executors (see docs/protocol.md):
    prompts coerce through str(), index lists coerce to plain lists.
    """
    if binding == "describe_image":
        if "index" not in bound or "prompt" not in bound:
            raise TypeError("describe_image() requires (index, prompt)")
        return SubCallRequest(
            kind=SubCallKind.DESCRIBE_IMAGE,
            prompt=safe_str(bound["prompt"]),
            image_indices=[bound["index"]],
        )
    if binding == "llm_query":
        if "prompt" not in bound:
            raise TypeError("llm_query() missing required argument: 'prompt'")
        return SubCallRequest(kind=SubCallKind.TEXT_QUERY, prompt=safe_str(bound["prompt"]))
    if binding == "llm_query_with_images":
        if "prompt" not in bound:
            raise TypeError("llm_query_with_images() missing required argument: 'prompt'")
        indices = bound.get("image_indices")
        sources = bound.get("image_sources")
        return SubCallRequest(
            kind=SubCallKind.QUERY_WITH_IMAGES,
            prompt=safe_str(bound["prompt"]),
            image_indices=list(indices) if indices is not None else None,
            image_sources=list(sources) if sources is not None else [],
        )
    if binding == "llm_query_batched_with_images":
        if "prompts" not in bound:
            raise TypeError(
                "llm_query_batched_with_images() missing required argument: 'prompts'"
            )
        prompts = bound["prompts"]
        if not isinstance(prompts, (list, tuple)):
            raise TypeError("llm_query_batched_with_images expects a list of prompts")
        indices = bound.get("image_indices")
        sources = bound.get("image_sources")
        return SubCallRequest(
            kind=SubCallKind.BATCHED_QUERY_WITH_IMAGES,
            prompt=[safe_str(p) for p in prompts],
            image_indices=list(indices) if indices is not None else None,
            image_sources=list(sources) if sources is not None else [],
        )
    raise NameError(f"name '{binding}' is not defined")


# ---------------------------------------------------------------------------
# Frame transport
# ---------------------------------------------------------------------------

def frame_dumps(frame: dict) -> str:
    # json escaping guarantees no raw newlines inside a frame line
    return json.dumps(frame, ensure_ascii=False, separators=(",", ":"))


class _ChannelClosed(BaseException):
    """Peer closed the pipe; escapes the stub's in-sandbox exception net."""


def serve_stub(in_stream, out_stream) -> int:
    """Serve a StubExecutor over stdio frames (used by `visionloop stub-serve`).

    This makes the stub drivable by the same harness as the interpreter
    sidecar, enabling frame-for-frame differential tests.
    """
    stub = StubExecutor()
    subcall_id = 0

    def write(frame: dict) -> None:
        out_stream.write(frame_dumps(frame) + "\n")
        out_stream.flush()

    def read_line() -> str:
        line = in_stream.readline()
        if not line:
            raise _ChannelClosed()
        return line

    write({"op": "Hello", "version": PROTOCOL_VERSION})
    try:
        while True:
            try:
                frame = json.loads(read_line())
            except _ChannelClosed:
                return 0
            op = frame.get("op")
            if op == "Init":
                stub.init(
                    [ImageRecord.from_dict(d) for d in frame.get("images", [])],
                    frame.get("context", ""),
                )
                write({"op": "Init", "ok": True})
            elif op == "Exec":

                def on_subcall(request: SubCallRequest):
                    nonlocal subcall_id
                    subcall_id += 1
                    write({"op": "SubCall", "id": subcall_id, **request.as_frame_payload()})
                    reply = json.loads(read_line())
                    if reply.get("error") is not None:
                        raise RuntimeError(reply["error"])
                    return reply["texts"] if "texts" in reply else reply["text"]

                result = stub.run(frame["code"], on_subcall)
                write({"op": "ExecDone", **result.as_frame_payload()})
            elif op == "Snapshot":
                view = stub.snapshot(frame.get("full") or ())
                write(
                    {
                        "op": "SnapshotResult",
                        "vars": [v.as_triple() for v in view.vars],
                        "full": view.full,
                    }
                )
            elif op == "Shutdown":
                write({"op": "Shutdown", "ok": True})
                return 0
            else:
                return 1
    except _ChannelClosed:
        return 0


# ---------------------------------------------------------------------------
# Sidecar subprocess client
# ---------------------------------------------------------------------------

class SidecarExecutor:
    """Client for an interpreter sidecar speaking rvlm-proto/1 over stdio."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise ExecutorCrashed(f"could not spawn sidecar {self.command}: {exc}") from exc
        hello = self._read()
        if hello.get("op") != "Hello":
            raise ProtocolVersionMismatch(f"expected Hello, got {hello.get('op')!r}")
        if hello.get("version") != PROTOCOL_VERSION:
            raise ProtocolVersionMismatch(
                f"sidecar speaks {hello.get('version')!r}, expected {PROTOCOL_VERSION!r}"
            )

    def _read(self) -> dict:
        line = self._proc.stdout.readline()
        if not line:
            raise ExecutorCrashed("sidecar closed its pipe")
        try:
            return json.loads(line)
        except ValueError as exc:
            raise ExecutorCrashed(f"sidecar sent a non-JSON frame: {line!r}") from exc

    def _write(self, frame: dict) -> None:
        try:
            self._proc.stdin.write(frame_dumps(frame) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ExecutorCrashed(f"sidecar pipe broken: {exc}") from exc

    def init(self, images: Sequence[ImageRecord], context_text: str) -> None:
        self._write(
            {
                "op": "Init",
                "context": context_text,
                "images": [rec.as_context_dict() for rec in images],
            }
        )
        ack = self._read()
        if ack.get("op") != "Init" or not ack.get("ok"):
            raise ExecutorCrashed(f"sidecar rejected init: {ack}")

    def run(self, code: str, on_subcall: SubCallHandler) -> ExecResult:
        self._write({"op": "Exec", "code": code})
        while True:
            frame = self._read()
            op = frame.get("op")
            if op == "SubCall":
                try:
                    result = on_subcall(SubCallRequest.from_frame_payload(frame))
                except Exception as exc:
                    self._write(
                        {"op": "SubCallResult", "id": frame.get("id"), "error": str(exc)}
                    )
                else:
                    body = {"texts": result} if isinstance(result, list) else {"text": result}
                    self._write({"op": "SubCallResult", "id": frame.get("id"), **body})
            elif op == "ExecDone":
                return ExecResult.from_frame_payload(frame)
            else:
                raise ExecutorCrashed(f"unexpected frame {op!r} during exec")

    def snapshot(self, full: Sequence[str] = ()) -> SnapshotView:
        self._write({"op": "Snapshot", "full": list(full)})
        frame = self._read()
        if frame.get("op") != "SnapshotResult":
            raise ExecutorCrashed(f"unexpected frame {frame.get('op')!r} for snapshot")
        return SnapshotView(
            vars=[VarInfo(*triple) for triple in frame.get("vars", [])],
            full=dict(frame.get("full", {})),
        )

    def shutdown(self) -> None:
        if self._proc.poll() is not None:
            return
        try:
            self._write({"op": "Shutdown"})
            self._proc.stdout.readline()  # best-effort ack
        except ExecutorCrashed:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
