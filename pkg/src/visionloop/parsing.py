"""Model-output parsing: code fences and termination directives."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

CODE_FENCE_TAG = "repl"

WARN_MULTIPLE_BLOCKS = "multiple-repl-blocks"
WARN_UNTERMINATED_FENCE = "unterminated-fence"
WARN_MALFORMED_DIRECTIVE = "malformed-directive"


class FinalKind(str, Enum):
    FINAL_TEXT = "FinalText"
    FINAL_VAR = "FinalVar"


@dataclass(frozen=True)
class FinalSignal:
    """Termination directive: literal answer text, or a variable name."""

    kind: FinalKind
    payload: str

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "payload": self.payload}

    @classmethod
    def from_dict(cls, payload: Optional[dict]) -> Optional["FinalSignal"]:
        if payload is None:
            return None
        return cls(FinalKind(payload["kind"]), payload["payload"])


def _split_fences(text: str) -> tuple[list[tuple[str, str]], bool, list[str]]:
    """Scan line-wise for fenced blocks.

    Returns (list of (tag, body), unterminated flag, lines outside fences).
    """
    fences: list[tuple[str, str]] = []
    outside: list[str] = []
    in_fence = False
    tag = ""
    body: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not in_fence and stripped.startswith("```"):
            in_fence = True
            tag = stripped[3:].strip()
            body = []
        elif in_fence and stripped == "```":
            in_fence = False
            fences.append((tag, "\n".join(body)))
        elif in_fence:
            body.append(line)
        else:
            outside.append(line)
    return fences, in_fence, outside


def extract_code_block(model_output: str) -> tuple[Optional[str], list[tuple[str, str]]]:
    """Pull the first ```repl``` fenced block out of a model turn.

    Returns (code or None, warnings). Protocol allows at most one block per
    turn: extra blocks are dropped with a warning, and an unterminated fence
    contributes no code.
    """
    warnings: list[tuple[str, str]] = []
    fences, unterminated, _ = _split_fences(model_output)
    repl_blocks = [body for fence_tag, body in fences if fence_tag == CODE_FENCE_TAG]
    if unterminated:
        warnings.append(
            (WARN_UNTERMINATED_FENCE, "model output ends inside an open code fence")
        )
    if len(repl_blocks) > 1:
        warnings.append(
            (
                WARN_MULTIPLE_BLOCKS,
                f"{len(repl_blocks)} repl blocks in one turn; executing the first only",
            )
        )
    return (repl_blocks[0] if repl_blocks else None), warnings


_DIRECTIVE_RE = re.compile(r"\b(FINAL_VAR|FINAL)\(")


def _balanced_payload(text: str, open_paren: int) -> Optional[str]:
    depth = 0
    for pos in range(open_paren, len(text)):
        ch = text[pos]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[open_paren + 1 : pos]
    return None


def _strip_quotes(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ("'", '"'):
        return value[1:-1]
    return value


def detect_final_directive(
    model_output: str,
    exec_signal: Optional[FinalSignal] = None,
) -> tuple[Optional[FinalSignal], list[tuple[str, str]]]:
    """Resolve a turn's termination signal.

    An executor-raised signal wins outright. Otherwise the first textual
    FINAL(...) / FINAL_VAR(...) appearing outside any code fence is parsed;
    unbalanced parentheses or a non-identifier variable name are ignored
    with a warning.
    """
    if exec_signal is not None:
        return exec_signal, []
    warnings: list[tuple[str, str]] = []
    _, _, outside = _split_fences(model_output)
    scan_text = "\n".join(outside)
    match = _DIRECTIVE_RE.search(scan_text)
    if not match:
        return None, warnings
    payload = _balanced_payload(scan_text, match.end() - 1)
    if payload is None:
        warnings.append(
            (WARN_MALFORMED_DIRECTIVE, f"unbalanced parentheses after {match.group(1)}(")
        )
        return None, warnings
    if match.group(1) == "FINAL_VAR":
        name = _strip_quotes(payload)
        if not name.isidentifier():
            warnings.append(
                (WARN_MALFORMED_DIRECTIVE, f"FINAL_VAR payload is not an identifier: {name!r}")
            )
            return None, warnings
        return FinalSignal(FinalKind.FINAL_VAR, name), warnings
    return FinalSignal(FinalKind.FINAL_TEXT, _strip_quotes(payload.strip())), warnings
