"""Session quality-of-experience scoring.

A session's score is a weighted sum over chunks: perceptual quality,
minus rebuffering time, plus upward quality switches, minus downward
ones.  The default weights come from a regression of user ratings
against perceptual-quality playback metrics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import ConfigError, DataError

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .player import SessionLog


@dataclass(frozen=True)
class QoeParams:
    """Weights for the four QoE terms.

    quality_weight scales the per-chunk perceptual score, rebuffer_weight
    penalizes stall seconds, and the two smoothness weights price upward
    and downward switches separately (downward switches hurt more).
    """

    quality_weight: float = 0.8469
    rebuffer_weight: float = 28.7959
    smooth_up_weight: float = 0.2979
    smooth_down_weight: float = 1.0610

    def __post_init__(self) -> None:
        for field_name in (
            "quality_weight",
            "rebuffer_weight",
            "smooth_up_weight",
            "smooth_down_weight",
        ):
            value = getattr(self, field_name)
            if not math.isfinite(value):
                raise ConfigError(f"{field_name} must be finite")
        if self.rebuffer_weight < 0.0:
            raise ConfigError("rebuffer_weight must be non-negative")
        if self.smooth_down_weight < 0.0:
            raise ConfigError("smooth_down_weight must be non-negative")


DEFAULT_QOE = QoeParams()


def chunk_qoe(
    prev_quality: float | None,
    quality: float,
    rebuffer: float,
    params: QoeParams = DEFAULT_QOE,
) -> float:
    """Score one chunk given the previous chunk's quality.

    ``prev_quality`` is None for the first chunk of a session, which
    contributes no smoothness term.
    """
    score = params.quality_weight * quality - params.rebuffer_weight * rebuffer
    if prev_quality is not None:
        diff = quality - prev_quality
        if diff >= 0.0:
            score += params.smooth_up_weight * diff
        else:
            score -= params.smooth_down_weight * (prev_quality - quality)
    return score


def session_qoe(log: "SessionLog", params: QoeParams = DEFAULT_QOE) -> float:
    """Sum chunk scores over a completed session.

    Startup delay is never part of the sum directly: when the player is
    configured to bill the first download as startup, the first chunk's
    recorded rebuffer is zero; otherwise the stall already sits in that
    chunk's rebuffer field.
    """
    if not log.outcomes:
        raise DataError("empty session")
    total = 0.0
    prev_quality: float | None = None
    for outcome in log.outcomes:
        total += chunk_qoe(prev_quality, outcome.quality, outcome.rebuffer, params)
        prev_quality = outcome.quality
    return total
