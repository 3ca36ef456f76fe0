"""Frame-level harness for driving executor processes over stdio."""

from __future__ import annotations

import json
import subprocess
import sys

PROTOCOL_VERSION = "rvlm-proto/1"

SIDECAR_CMD = [sys.executable, "-m", "visionloop_sidecar"]
STUB_CMD = [sys.executable, "-m", "visionloop.cli", "stub-serve"]

IMG = {"data": "AAAA", "media_type": "image/png", "detail": "low"}

# Frame fields excluded from equality (environment timing noise).
TIMING_FIELDS = ("elapsed_ms",)


def canonical(frame: dict) -> dict:
    return {k: v for k, v in frame.items() if k not in TIMING_FIELDS}


class FrameDriver:
    """Speaks rvlm-proto/1 to a child process and records every frame."""

    def __init__(self, command):
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self.received: list[dict] = []
        self.hello = self.read()
        assert self.hello["op"] == "Hello", self.hello

    def read(self) -> dict:
        line = self.proc.stdout.readline()
        assert line, "executor closed its pipe unexpectedly"
        frame = json.loads(line)
        self.received.append(frame)
        return frame

    def send(self, frame: dict) -> None:
        self.proc.stdin.write(json.dumps(frame) + "\n")
        self.proc.stdin.flush()

    def init(self, images: int = 3, context: str = "shared context") -> dict:
        self.send({"op": "Init", "context": context, "images": [IMG] * images})
        ack = self.read()
        assert ack.get("ok") is True, ack
        return ack

    def exec(self, code: str, replies: dict | None = None) -> dict:
        """Run one code block, answering SubCall frames along the way.

        `replies` maps a SubCall id to its SubCallResult payload overrides;
        unlisted sub-calls get a deterministic canned text keyed by id.
        """
        self.send({"op": "Exec", "code": code})
        while True:
            frame = self.read()
            if frame["op"] == "ExecDone":
                return frame
            assert frame["op"] == "SubCall", frame
            reply = {"op": "SubCallResult", "id": frame["id"]}
            override = (replies or {}).get(frame["id"])
            if override is not None:
                reply.update(override)
            elif frame["kind"] == "BatchedQueryWithImages":
                reply["texts"] = [
                    f"canned reply {frame['id']}.{i}" for i in range(len(frame["prompt"]))
                ]
            else:
                reply["text"] = f"canned reply {frame['id']}"
            self.send(reply)

    def snapshot(self, full=()) -> dict:
        self.send({"op": "Snapshot", "full": list(full)})
        return self.read()

    def shutdown(self) -> None:
        self.send({"op": "Shutdown"})
        self.read()
        self.proc.wait(timeout=10)

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait(timeout=10)


def run_script(command, case: dict) -> list[dict]:
    """Drive a full Init/Exec*/Snapshot/Shutdown script; canonical frames out."""
    driver = FrameDriver(command)
    try:
        driver.init(images=case.get("images", 3), context=case.get("context", "shared context"))
        for code in case["execs"]:
            driver.exec(code, case.get("replies"))
        driver.snapshot(full=case.get("full", ["report"]))
        driver.shutdown()
    finally:
        driver.kill()
    return [canonical(f) for f in driver.received]
