"""Persistent interpreter sidecar for the rvlm-proto/1 frame protocol.

One process per session. Code blocks execute at module scope in a single
long-lived namespace; the injected query bindings block on a SubCall frame
round trip back to the orchestrator; exceptions render into stderr without
killing the process. The full frame schema, preview rules, and equality
contract live in the orchestrator repo's docs/protocol.md — this module
must stay frame-identical to the stub executor on the stub-expressible
subset, so renderings below are deliberately spelled out rather than
clever.
"""

from __future__ import annotations

import io
import json
import sys
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout

PROTOCOL_VERSION = "rvlm-proto/1"

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


class _FinalRaised(Exception):
    def __init__(self, kind: str, payload: str):
        super().__init__(payload)
        self.kind = kind
        self.payload = payload


class _ChannelClosed(BaseException):
    """Orchestrator went away; escapes the sandbox exception net."""


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
    return "".join(traceback.format_exception_only(type(exc), exc))


class Sidecar:
    def __init__(self, in_stream=None, out_stream=None):
        self._in = in_stream if in_stream is not None else sys.stdin
        self._out = out_stream if out_stream is not None else sys.stdout
        self._ns: dict = {}
        self._renders: dict = {}
        self._subcall_id = 0

    # -- transport ----------------------------------------------------------

    def _write(self, frame: dict) -> None:
        self._out.write(json.dumps(frame, ensure_ascii=False, separators=(",", ":")) + "\n")
        self._out.flush()

    def _read(self) -> dict:
        line = self._in.readline()
        if not line:
            raise _ChannelClosed()
        return json.loads(line)

    # -- query bindings ------------------------------------------------------

    def _subcall(self, payload: dict):
        self._subcall_id += 1
        self._write({"op": "SubCall", "id": self._subcall_id, **payload})
        reply = self._read()
        if reply.get("error") is not None:
            raise RuntimeError(reply["error"])
        return reply["texts"] if "texts" in reply else reply["text"]

    def _make_bindings(self) -> dict:
        def describe_image(index, prompt):
            return self._subcall(
                {
                    "kind": "DescribeImage",
                    "prompt": safe_str(prompt),
                    "image_indices": [index],
                    "image_sources": [],
                }
            )

        def llm_query(prompt):
            return self._subcall(
                {
                    "kind": "TextQuery",
                    "prompt": safe_str(prompt),
                    "image_indices": None,
                    "image_sources": [],
                }
            )

        def llm_query_with_images(prompt, image_indices=None, image_sources=None):
            return self._subcall(
                {
                    "kind": "QueryWithImages",
                    "prompt": safe_str(prompt),
                    "image_indices": list(image_indices)
                    if image_indices is not None
                    else None,
                    "image_sources": list(image_sources)
                    if image_sources is not None
                    else [],
                }
            )

        def llm_query_batched_with_images(prompts, image_indices=None, image_sources=None):
            if not isinstance(prompts, (list, tuple)):
                raise TypeError("llm_query_batched_with_images expects a list of prompts")
            return self._subcall(
                {
                    "kind": "BatchedQueryWithImages",
                    "prompt": [safe_str(p) for p in prompts],
                    "image_indices": list(image_indices)
                    if image_indices is not None
                    else None,
                    "image_sources": list(image_sources)
                    if image_sources is not None
                    else [],
                }
            )

        def FINAL(text):
            raise _FinalRaised("FinalText", safe_str(text))

        def FINAL_VAR(name):
            if not isinstance(name, str):
                raise TypeError("FINAL_VAR expects the variable name as a string")
            if name not in self._ns:
                raise NameError(f"name '{name}' is not defined")
            raise _FinalRaised("FinalVar", name)

        return {
            "describe_image": describe_image,
            "llm_query": llm_query,
            "llm_query_with_images": llm_query_with_images,
            "llm_query_batched_with_images": llm_query_batched_with_images,
            "FINAL": FINAL,
            "FINAL_VAR": FINAL_VAR,
        }

    # -- ops ----------------------------------------------------------------

    def _init(self, frame: dict) -> None:
        self._ns = {
            "context": frame.get("context", ""),
            "context_images": [
                {
                    "data": img["data"],
                    "media_type": img["media_type"],
                    "detail": img.get("detail", "auto"),
                }
                for img in frame.get("images", [])
            ],
        }
        self._ns.update(self._make_bindings())
        self._renders = {}
        self._write({"op": "Init", "ok": True})

    def _collect_new_vars(self) -> list:
        current: dict = {}
        infos: list = []
        for name in sorted(self._ns):
            if name.startswith("_") or name in BASELINE_NAMES:
                continue
            text = safe_str(self._ns[name])
            current[name] = text
            if self._renders.get(name) != text:
                infos.append(
                    [name, type(self._ns[name]).__name__, truncate_preview(text)]
                )
        self._renders = current
        return infos

    def _exec(self, code: str) -> None:
        started = time.monotonic()
        stdout_io = io.StringIO()
        stderr_io = io.StringIO()
        final = None
        try:
            with redirect_stdout(stdout_io), redirect_stderr(stderr_io):
                compiled = compile(code, SANDBOX_FILENAME, "exec")
                exec(compiled, self._ns)  # noqa: S102 - executing model code is the job
        except _FinalRaised as sig:
            final = {"kind": sig.kind, "payload": sig.payload}
        except _ChannelClosed:
            raise
        except (Exception, SystemExit) as exc:
            stderr_io.write(render_exception(exc))
        self._write(
            {
                "op": "ExecDone",
                "stdout": stdout_io.getvalue(),
                "stderr": stderr_io.getvalue(),
                "new_vars": self._collect_new_vars(),
                "final_signal": final,
                "elapsed_ms": int((time.monotonic() - started) * 1000),
            }
        )

    def _snapshot(self, frame: dict) -> None:
        infos = [
            [name, type(self._ns[name]).__name__, truncate_preview(safe_str(self._ns[name]))]
            for name in sorted(self._ns)
            if not name.startswith("_") and name not in BASELINE_NAMES
        ]
        full = {
            name: safe_str(self._ns[name])
            for name in frame.get("full") or ()
            if name in self._ns
        }
        self._write({"op": "SnapshotResult", "vars": infos, "full": full})

    # -- main loop ----------------------------------------------------------

    def serve(self) -> int:
        self._write({"op": "Hello", "version": PROTOCOL_VERSION})
        try:
            while True:
                frame = self._read()
                op = frame.get("op")
                if op == "Init":
                    self._init(frame)
                elif op == "Exec":
                    self._exec(frame.get("code", ""))
                elif op == "Snapshot":
                    self._snapshot(frame)
                elif op == "Shutdown":
                    self._write({"op": "Shutdown", "ok": True})
                    return 0
                else:
                    return 1
        except _ChannelClosed:
            return 0


def main() -> int:
    return Sidecar().serve()


if __name__ == "__main__":
    sys.exit(main())
