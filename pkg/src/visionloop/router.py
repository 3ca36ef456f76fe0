"""Task-complexity scoring and adaptive iteration budgeting.

Four scalar features are extracted from segmentation-mask statistics
(per-sub-region volumes in cc): label entropy of the volume distribution,
total volume, count of materially present sub-regions, and a flag for
regions too small to characterise visually. A weighted composite score in
[0, 1] maps through a piecewise-constant band function to a recommended
iteration budget. A separate per-iteration stall rule terminates a session
early once the budget is exceeded and progress has dried up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import AllZeroVolumes, EmptyHistory

# Maximum label entropy for a three-region mask, in bits.
H_MAX_BITS = math.log2(3.0)

# Composite weights for (entropy, volume, region count, tiny flag).
SCORE_WEIGHTS = (0.35, 0.30, 0.25, 0.10)

# Volume (cc) at which the volume term saturates.
VOLUME_SATURATION_CC = 50.0

# A sub-region counts as present above this volume (cc).
PRESENCE_THRESHOLD_CC = 0.01

# Any positive volume below this (cc) flags a hard-to-see tiny region.
TINY_UPPER_CC = 0.5

# Band edges (upper-exclusive) and the budget below each edge; scores at or
# above the last edge get BUDGET_MAX.
BUDGET_BANDS = ((0.25, 3), (0.45, 4), (0.65, 5))
BUDGET_MAX = 6

# An iteration is productive with stdout at or above this many characters.
MIN_MEANINGFUL_STDOUT_CHARS = 20

# Consecutive unproductive iterations required to declare a stall.
STALL_WINDOW = 2


@dataclass(frozen=True)
class ComplexityFeatures:
    """The four router scalars extracted from mask statistics."""

    entropy_bits: float
    total_volume_cc: float
    present_count: int
    tiny_flag: int


@dataclass(frozen=True)
class ProductivityRecord:
    """Per-iteration progress signals fed to the stall detector."""

    subcall_count: int
    stdout_chars: int
    new_nontrivial_vars: int


class ContinueReason(str, Enum):
    WITHIN_BUDGET = "WithinBudget"
    STALL_DETECTED = "StallDetected"
    BUDGET_EXHAUSTED = "BudgetExhausted"


@dataclass(frozen=True)
class ContinueDecision:
    proceed: bool
    reason: ContinueReason


def label_entropy(volumes: Sequence[float]) -> float:
    """Shannon entropy (bits) of the normalised sub-region volume distribution.

    Zero-volume entries contribute nothing (0*log 0 := 0). Raises
    AllZeroVolumes when every entry is zero, since an empty mask has no
    distribution to score.
    """
    if not volumes:
        raise ValueError("at least one sub-region volume is required")
    if any(v < 0 for v in volumes):
        raise ValueError("sub-region volumes must be non-negative")
    total = float(sum(volumes))
    if total == 0.0:
        raise AllZeroVolumes("all sub-region volumes are zero")
    entropy = 0.0
    for v in volumes:
        if v > 0:
            p = v / total
            entropy -= p * math.log2(p)
    return entropy


def extract_features(volumes: Sequence[float]) -> ComplexityFeatures:
    """Compute the four complexity scalars from per-sub-region volumes (cc).

    A degenerate all-zero mask yields (0, 0, 0, 0); callers can detect it
    through present_count == 0. The tiny flag fires for any volume strictly
    inside (0, TINY_UPPER_CC), including ones below the presence threshold.
    """
    if not volumes:
        raise ValueError("at least one sub-region volume is required")
    if any(v < 0 for v in volumes):
        raise ValueError("sub-region volumes must be non-negative")
    total = float(sum(volumes))
    entropy = label_entropy(volumes) if total > 0 else 0.0
    present = sum(1 for v in volumes if v > PRESENCE_THRESHOLD_CC)
    tiny = 1 if any(0 < v < TINY_UPPER_CC for v in volumes) else 0
    return ComplexityFeatures(entropy, total, present, tiny)


def complexity_score(features: ComplexityFeatures) -> float:
    """Weighted composite of the four features, clamped to [0, 1].

    score = 0.35*H/H_max + 0.30*min(V/50, 1) + 0.25*R/3 + 0.10*T
    """
    w_h, w_v, w_r, w_t = SCORE_WEIGHTS
    score = math.fsum(
        (
            w_h * features.entropy_bits / H_MAX_BITS,
            w_v * min(features.total_volume_cc / VOLUME_SATURATION_CC, 1.0),
            w_r * features.present_count / 3.0,
            w_t * features.tiny_flag,
        )
    )
    return min(max(score, 0.0), 1.0)


def recommended_budget(score: float) -> int:
    """Map a composite score to an iteration budget via half-open bands."""
    for upper, budget in BUDGET_BANDS:
        if score < upper:
            return budget
    return BUDGET_MAX


def assess_productivity(record: ProductivityRecord) -> bool:
    """An iteration is productive if it queried a sub-model, printed
    meaningful output, or created at least one non-trivial variable."""
    return (
        record.subcall_count >= 1
        or record.stdout_chars >= MIN_MEANINGFUL_STDOUT_CHARS
        or record.new_nontrivial_vars >= 1
    )


def should_continue(
    iteration_index: int,
    history: Sequence[bool],
    budget: int,
) -> ContinueDecision:
    """Per-iteration continue/stop decision.

    Stops (StallDetected) only when the two most recent iterations were both
    unproductive AND the zero-based iteration index has reached the
    recommended budget — i.e. the budgeted turns are already spent. The hard
    ceiling is enforced by the session loop, not here.
    """
    if not history:
        if iteration_index > 0:
            raise EmptyHistory(
                f"no productivity history for iteration {iteration_index}"
            )
        return ContinueDecision(True, ContinueReason.WITHIN_BUDGET)
    stalled = len(history) >= STALL_WINDOW and not any(history[-STALL_WINDOW:])
    if stalled and iteration_index >= budget:
        return ContinueDecision(False, ContinueReason.STALL_DETECTED)
    return ContinueDecision(True, ContinueReason.WITHIN_BUDGET)


class RecursionRouter:
    """Pre-flight budget prediction plus per-iteration stall detection.

    Pure and stateless after construction; safe to share across threads.
    """

    def __init__(self, volumes: Sequence[float]):
        self.features = extract_features(volumes)
        self.score = complexity_score(self.features)
        self.budget = recommended_budget(self.score)

    @classmethod
    def from_features(cls, features: ComplexityFeatures) -> "RecursionRouter":
        router = cls.__new__(cls)
        router.features = features
        router.score = complexity_score(features)
        router.budget = recommended_budget(router.score)
        return router

    def should_continue(
        self, iteration_index: int, history: Sequence[bool]
    ) -> ContinueDecision:
        return should_continue(iteration_index, history, self.budget)
