"""visionloop: iterative vision-language sessions with adaptive budgets.

A vision-capable chat model runs inside a generate-execute loop over a
persistent sandboxed interpreter; a lightweight router predicts how many
iterations a case deserves and stops stalled sessions; every run leaves a
replayable audit trace and can be rendered into a structured clinical
report.
"""

from .errors import (
    AllZeroVolumes,
    CompileFailed,
    EmptyHistory,
    ExecutorCrashed,
    IndexOutOfRange,
    ManifestError,
    MixedSpecMissing,
    ProtocolVersionMismatch,
    ProviderError,
    SchemaViolation,
    ScriptExhausted,
    SeqGap,
    TemplateMissing,
    TraceSealed,
    UnknownView,
    UnparseableExtraction,
    VisionLoopError,
)
from .executor import (
    PROTOCOL_VERSION,
    ExecResult,
    SidecarExecutor,
    SnapshotView,
    StubExecutor,
    VarInfo,
)
from .images import ImageRecord, ImageTable
from .messages import Message
from .parsing import FinalKind, FinalSignal, detect_final_directive, extract_code_block
from .profiles import (
    EvidenceBundle,
    ModalityProfile,
    assemble_evidence,
    profile,
    system_prompt,
)
from .providers import (
    CannedResponse,
    HttpProvider,
    ProviderReply,
    ProviderScript,
    RecordingProvider,
    ScriptedProvider,
    Usage,
)
from .report import (
    ExecutionStats,
    RenderedReport,
    ReportSchema,
    extract_sections,
    render,
)
from .router import (
    ComplexityFeatures,
    ContinueDecision,
    ContinueReason,
    ProductivityRecord,
    RecursionRouter,
    assess_productivity,
    complexity_score,
    extract_features,
    label_entropy,
    recommended_budget,
    should_continue,
)
from .runner import CaseOutcome, run_case, run_session
from .session import (
    CompletionResult,
    IterationRecord,
    SessionRequest,
    Termination,
    build_initial_history,
    default_answer,
    recover_report_variable,
    run_completion,
)
from .subcalls import SubCallKind, SubCallRequest, handle_subcall
from .trace import (
    ReplayReport,
    SessionTrace,
    TraceEvent,
    TraceLog,
    FileTraceWriter,
    canonicalize_event,
    replay,
)

__version__ = "0.1.0"
