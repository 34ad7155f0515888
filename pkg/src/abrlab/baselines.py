"""Classic ABR deciders: rate-based, buffer-based, receding-horizon.

All three plug into ``run_session`` as deciders.  The rate-based and
Lyapunov-style rules are stateless functions; the receding-horizon
controller keeps its prediction-error history per instance, so callers
create one controller per session.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError, DataError
from .media import NetworkTrace, VideoManifest
from .player import DEFAULT_PLAYER, Observation, PlayerConfig, SessionContext
from .qoe import DEFAULT_QOE, QoeParams
from .solver import _plan_search

PREDICTION_WINDOW = 5


def harmonic_mean(values: list[float]) -> float:
    """Harmonic mean; the natural average for rates over equal byte shares."""
    if not values:
        raise DataError("harmonic mean of empty history")
    return len(values) / sum(1.0 / v for v in values)


def rb_decide(
    throughput_history: list[float],
    manifest: VideoManifest,
    chunk_index: int,
) -> int:
    """Rate-based rule: highest level whose rate fits the predicted bandwidth.

    Prediction is the harmonic mean of up to the last five measured
    chunk throughputs (bytes/second).  The level rate is the imminent
    chunk's size over the chunk duration.  With no history yet, or when
    nothing fits, picks the lowest level.
    """
    if chunk_index < 0 or chunk_index >= manifest.n_chunks:
        raise DataError(f"chunk index {chunk_index} outside the video")
    window = [v for v in throughput_history[-PREDICTION_WINDOW:]]
    if not window:
        return 0
    prediction = harmonic_mean(window)
    duration = manifest.chunk_duration
    choice = 0
    for level in range(manifest.n_levels):
        if manifest.sizes[chunk_index][level] / duration <= prediction:
            choice = level
    return choice


@dataclass(frozen=True)
class BolaParams:
    """Buffer-based control constants.

    ``gamma_p`` trades buffer headroom against utility; the control gain
    V is derived from it and the buffer cap so the score of the top rung
    crosses zero exactly when the buffer is full.  Utilities default to
    log size ratios of the imminent chunk; the perceptual option uses
    scored quality differences instead.
    """

    gamma_p: float = 5.0
    buffer_max: float = 60.0
    utility: str = "size_log"

    def __post_init__(self) -> None:
        if not math.isfinite(self.gamma_p) or self.gamma_p <= 0.0:
            raise ConfigError("gamma_p must be positive")
        if self.buffer_max <= 0.0:
            raise ConfigError("buffer_max must be positive")
        if self.utility not in ("size_log", "vmaf"):
            raise ConfigError("utility must be 'size_log' or 'vmaf'")


DEFAULT_BOLA = BolaParams()


def _bola_utilities(manifest: VideoManifest, chunk_index: int, params: BolaParams) -> list[float]:
    if params.utility == "size_log":
        base = manifest.sizes[chunk_index][0]
        return [math.log(s / base) for s in manifest.sizes[chunk_index]]
    base_q = manifest.qualities[chunk_index][0]
    return [(q - base_q) / 20.0 for q in manifest.qualities[chunk_index]]


def bola_decide(
    buffer_s: float,
    manifest: VideoManifest,
    chunk_index: int,
    params: BolaParams = DEFAULT_BOLA,
) -> int:
    """Lyapunov drift-plus-penalty rule on the current buffer level.

    score_m = (V * (u_m + gamma_p) - Q) / size_m with Q the buffer in
    chunk units; picks the argmax when positive (ties toward the lower
    level), else the lowest level.
    """
    if chunk_index < 0 or chunk_index >= manifest.n_chunks:
        raise DataError(f"chunk index {chunk_index} outside the video")
    if buffer_s < 0.0:
        raise DataError("negative buffer")
    duration = manifest.chunk_duration
    utilities = _bola_utilities(manifest, chunk_index, params)
    u_max = max(utilities)
    gain = (params.buffer_max / duration - 1.0) / (u_max + params.gamma_p)
    q_chunks = buffer_s / duration
    best_level = 0
    best_score = -math.inf
    for level, u in enumerate(utilities):
        score = (gain * (u + params.gamma_p) - q_chunks) / manifest.sizes[chunk_index][level]
        if score > best_score:
            best_score = score
            best_level = level
    return best_level if best_score > 0.0 else 0


class RobustMpc:
    """Receding-horizon control with a pessimistic throughput predictor.

    Predicts the harmonic mean of the last five chunk throughputs,
    discounted by the largest relative prediction error over the last
    five predictions, then picks the first step of the exact best plan
    against a constant-throughput synthetic future.  One instance per
    session: the error history is part of the controller's state.
    """

    def __init__(
        self,
        horizon: int = 5,
        params: QoeParams = DEFAULT_QOE,
        config: PlayerConfig = DEFAULT_PLAYER,
    ) -> None:
        if horizon < 1:
            raise ConfigError("horizon must be at least 1")
        self.horizon = horizon
        self.params = params
        self.config = config
        self._errors: list[float] = []
        self._pending: dict[int, float] = {}

    def _reconcile(self, ctx: SessionContext) -> None:
        """Score past predictions now that their downloads completed."""
        done = [k for k in self._pending if k < len(ctx.outcomes)]
        for k in sorted(done):
            actual = ctx.outcomes[k].throughput
            error = abs(self._pending.pop(k) - actual) / actual
            self._errors.append(error)
        if len(self._errors) > PREDICTION_WINDOW:
            self._errors = self._errors[-PREDICTION_WINDOW:]

    def decide(self, observation: Observation, ctx: SessionContext) -> int:
        self._reconcile(ctx)
        history = [oc.throughput for oc in ctx.outcomes[-PREDICTION_WINDOW:]]
        if not history:
            return 0
        discount = 1.0 + (max(self._errors) if self._errors else 0.0)
        prediction = harmonic_mean(history) / discount
        self._pending[ctx.snapshot.chunk_index] = prediction
        synthetic = NetworkTrace(
            name="constant-prediction",
            times=(0.0, 1.0),
            rates=(prediction, prediction),
        )
        fork = replace(ctx.snapshot, trace_position=0.0)
        n_eff = min(self.horizon, ctx.manifest.n_chunks - ctx.snapshot.chunk_index)
        _value, plan = _plan_search(
            synthetic, ctx.manifest, self.config, self.params, fork, n_eff, prune=True
        )
        return plan[0]
