"""Exception taxonomy shared across the package."""

from __future__ import annotations


class VisionLoopError(Exception):
    """Base class for all package-specific errors."""


# --- router ---

class AllZeroVolumes(VisionLoopError):
    """Every sub-region volume is zero; the mask is empty and cannot be scored."""


class EmptyHistory(VisionLoopError):
    """Continue/stop decision requested for a past iteration with no history."""


# --- provider gateway ---

class ProviderError(VisionLoopError):
    """Transport or protocol failure talking to a completion backend."""


class ScriptExhausted(ProviderError):
    """A scripted provider was asked for more responses than its transcript holds."""


class IndexOutOfRange(VisionLoopError):
    """A sub-call referenced an image index outside the session image table."""


class MixedSpecMissing(VisionLoopError):
    """An image-requiring sub-call supplied neither indices nor inline sources."""


# --- executor protocol ---

class ExecutorCrashed(VisionLoopError):
    """The executor process died or closed its pipe mid-session."""


class ProtocolVersionMismatch(VisionLoopError):
    """Peer negotiated a different executor protocol version."""


# --- audit trail ---

class SeqGap(VisionLoopError):
    """Appended event's sequence number is not last + 1."""


class SchemaViolation(VisionLoopError):
    """Event payload does not match the documented shape for its kind."""


class TraceSealed(VisionLoopError):
    """Append attempted on a trace that has already been sealed."""


# --- clinical profiles / reporting ---

class UnknownView(VisionLoopError):
    """Requested imaging view is not part of the selected clinical profile."""


class UnparseableExtraction(VisionLoopError):
    """Structured section extraction failed even after a reformat retry."""


class TemplateMissing(VisionLoopError):
    """The report document template could not be found."""


class CompileFailed(VisionLoopError):
    """The external typesetting tool exited nonzero."""


# --- cli / ingestion ---

class ManifestError(VisionLoopError):
    """Case manifest failed validation."""
