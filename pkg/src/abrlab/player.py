"""Virtual playback engine: chunk downloads, buffer dynamics, sessions.

The model is deliberately simple and exact.  Per chunk: the request
round trip elapses first with no payload bytes, then bytes accumulate by
walking the trace's piecewise-constant segments.  Playback drains the
buffer during the whole download window; if the buffer runs dry the
session stalls for the shortfall, and the stall is billed as additional
wall time once the chunk lands.  The fresh chunk then tops the buffer
up by one chunk duration; any overflow past the buffer cap is absorbed
by idling (the player waits, playing from a full buffer, before asking
for the next chunk).  A single clock drives both the session and the
trace position, so the accounting identity

    final virtual time == startup + sum(download + rebuffer + idle)

holds exactly.  The first chunk of a session necessarily stalls from an
empty buffer; by default that stall is billed as startup delay rather
than rebuffering.
"""
from __future__ import annotations

import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, InternalError
from .media import NetworkTrace, VideoManifest


@dataclass(frozen=True)
class PlayerConfig:
    """Playback constants and observation scaling.

    Scales normalize raw observation features to roughly unit range:
    throughputs by 10 Mbps, download times by 10 s, chunk sizes by 8 MB,
    perceptual scores by 100; buffer levels are scaled by buffer_max.
    """

    buffer_max: float = 60.0
    rtt: float = 0.08
    history_len: int = 8
    future_horizon: int = 7
    trace_loop: bool = True
    startup_excluded: bool = True
    throughput_scale: float = 1_250_000.0
    download_scale: float = 10.0
    size_scale: float = 8_000_000.0
    quality_scale: float = 100.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.buffer_max) or self.buffer_max <= 0.0:
            raise ConfigError("buffer_max must be positive")
        if not math.isfinite(self.rtt) or self.rtt < 0.0:
            raise ConfigError("rtt must be non-negative")
        if self.history_len < 1:
            raise ConfigError("history_len must be at least 1")
        if self.future_horizon < 1:
            raise ConfigError("future_horizon must be at least 1")
        for name in ("throughput_scale", "download_scale", "size_scale", "quality_scale"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")


DEFAULT_PLAYER = PlayerConfig()


@dataclass(frozen=True)
class PlayerSnapshot:
    """Full player state between chunk decisions; cheap to fork."""

    virtual_time: float = 0.0
    buffer: float = 0.0
    chunk_index: int = 0
    last_level: int | None = None
    last_quality: float | None = None
    trace_position: float = 0.0


def initial_snapshot(start_offset: float = 0.0) -> PlayerSnapshot:
    if start_offset < 0.0 or not math.isfinite(start_offset):
        raise ConfigError("start_offset must be non-negative and finite")
    return PlayerSnapshot(trace_position=start_offset)


@dataclass(frozen=True)
class ChunkOutcome:
    """Everything recorded about one downloaded chunk."""

    index: int
    level: int
    bitrate: float
    size: float
    quality: float
    download_time: float
    throughput: float
    rebuffer: float
    startup: float
    idle: float
    buffer: float


@dataclass(frozen=True)
class SessionLog:
    """Completed session: ordered outcomes plus startup accounting."""

    outcomes: tuple[ChunkOutcome, ...]
    startup_time: float
    trace_name: str
    manifest_name: str


@dataclass
class Observation:
    """Scaled decision-time features for one chunk choice.

    Histories are aligned most-recent-last and zero-padded on the left;
    future matrices are zero-padded past the end of the video.
    """

    throughput_history: np.ndarray
    download_history: np.ndarray
    buffer_history: np.ndarray
    future_sizes: np.ndarray
    future_qualities: np.ndarray
    last_quality: float
    remain: float

    def __eq__(self, other: object) -> bool:  # arrays need elementwise compare
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            np.array_equal(self.throughput_history, other.throughput_history)
            and np.array_equal(self.download_history, other.download_history)
            and np.array_equal(self.buffer_history, other.buffer_history)
            and np.array_equal(self.future_sizes, other.future_sizes)
            and np.array_equal(self.future_qualities, other.future_qualities)
            and self.last_quality == other.last_quality
            and self.remain == other.remain
        )


@dataclass
class SessionContext:
    """Live view handed to deciders alongside the observation.

    Policy deciders only need the observation; planners and predictors
    (the lookahead expert, receding-horizon control) need exact player
    state and the raw per-chunk record, so both ride along.
    """

    snapshot: PlayerSnapshot
    outcomes: list[ChunkOutcome]
    trace: NetworkTrace
    manifest: VideoManifest
    config: PlayerConfig


Decider = Callable[[Observation, SessionContext], int]


Schedule = tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...], float, float]


def _transfer_start(schedule: Schedule, loop: bool, start: float) -> tuple[float, float]:
    """Normalize ``start`` onto the schedule: (position, bytes before it)."""
    bounds, rates, cum, period, _total = schedule
    pos = start % period if loop else start
    j = bisect_right(bounds, pos) - 1
    if j < 0:
        j = 0
    return pos, cum[j] + rates[j] * (pos - bounds[j])


def _finish_seconds(
    schedule: Schedule, loop: bool, pos: float, head: float, size: float
) -> float:
    """Seconds to move ``size`` bytes from ``pos`` (``head`` bytes deep).

    Byte offsets convert back to timeline positions by bisecting the
    cumulative table; full wrap periods are skipped arithmetically, and
    without looping the final rate extends forever.
    """
    bounds, rates, cum, period, total = schedule
    target = head + size
    if loop and target > total:
        beyond = target - total
        full = math.floor(beyond / total)
        tail = beyond - full * total
        while tail < 0.0:
            full -= 1
            tail += total
        while tail >= total:
            full += 1
            tail -= total
        k = bisect_right(cum, tail) - 1
        finish = bounds[k] + (tail - cum[k]) / rates[k]
        return (period - pos) + full * period + finish
    k = bisect_right(cum, target) - 1
    return bounds[k] + (target - cum[k]) / rates[k] - pos


def _transfer_seconds(schedule: Schedule, loop: bool, start: float, size: float) -> float:
    """Seconds needed to move ``size`` bytes starting at trace offset ``start``."""
    pos, head = _transfer_start(schedule, loop, start)
    return _finish_seconds(schedule, loop, pos, head, size)


def _transfer_many(
    schedule: Schedule, loop: bool, start: float, sizes: tuple[float, ...]
) -> list[float]:
    """Transfer seconds for several sizes from one start.

    Identical per size to ``_transfer_seconds`` by construction (same
    routine), so the planners and the player never disagree by an ulp.
    """
    pos, head = _transfer_start(schedule, loop, start)
    return [_finish_seconds(schedule, loop, pos, head, size) for size in sizes]


def _settle(
    buffer_s: float,
    download_time: float,
    chunk_len: float,
    buffer_max: float,
) -> tuple[float, float, float, float]:
    """Buffer bookkeeping after one download: (stall, idle, next_buffer,
    elapsed).  Single source of the dynamics arithmetic."""
    stall = download_time - buffer_s
    if stall < 0.0:
        stall = 0.0
    drained = buffer_s - download_time
    if drained < 0.0:
        drained = 0.0
    filled = drained + chunk_len
    idle = filled - buffer_max
    if idle < 0.0:
        idle = 0.0
    next_buffer = filled - idle
    elapsed = download_time + stall + idle
    return stall, idle, next_buffer, elapsed


def _advance(
    schedule: Schedule,
    loop: bool,
    trace_position: float,
    buffer_s: float,
    size: float,
    rtt: float,
    chunk_len: float,
    buffer_max: float,
) -> tuple[float, float, float, float, float, float]:
    """One download-and-playback advance on plain floats.

    Returns (download_time, avg_throughput, stall, idle, next_buffer,
    elapsed).  This is the single numeric core shared by ``step`` and
    the planners, so plan values replay bit-for-bit.
    """
    transfer = _transfer_seconds(schedule, loop, trace_position + rtt, size)
    download_time = rtt + transfer
    stall, idle, next_buffer, elapsed = _settle(buffer_s, download_time, chunk_len, buffer_max)
    return download_time, size / transfer, stall, idle, next_buffer, elapsed


def download_chunk(
    trace: NetworkTrace,
    start: float,
    size: float,
    rtt: float,
    loop: bool = False,
) -> tuple[float, float]:
    """Simulate one chunk fetch from trace offset ``start``.

    The round trip elapses first with no bytes moving.  Returns
    (download_time, average_throughput); the average covers only the
    transfer window, so ``throughput == size / (download_time - rtt)``.
    """
    if size <= 0.0 or not math.isfinite(size):
        raise DataError("chunk size must be positive")
    if rtt < 0.0 or not math.isfinite(rtt):
        raise ConfigError("rtt must be non-negative")
    if start < 0.0 or not math.isfinite(start):
        raise ConfigError("start must be non-negative")
    transfer = _transfer_seconds(trace.schedule, loop, start + rtt, size)
    return rtt + transfer, size / transfer


def step(
    snapshot: PlayerSnapshot,
    level: int,
    trace: NetworkTrace,
    manifest: VideoManifest,
    config: PlayerConfig = DEFAULT_PLAYER,
) -> tuple[ChunkOutcome, PlayerSnapshot]:
    """Download the imminent chunk at ``level`` and advance the player.

    Rebuffer is the stall shortfall ``(download_time - buffer)+``; for
    chunk 0 under startup_excluded it is billed as startup instead.
    """
    k = snapshot.chunk_index
    if k < 0 or k >= manifest.n_chunks:
        raise DataError(f"chunk index {k} outside the video")
    if level < 0 or level >= manifest.n_levels:
        raise DataError(f"level {level} outside the ladder")
    if manifest.chunk_duration > config.buffer_max:
        raise ConfigError("chunk duration exceeds buffer capacity")
    size = manifest.sizes[k][level]
    quality = manifest.qualities[k][level]
    download_time, throughput, stall, idle, next_buffer, elapsed = _advance(
        trace.schedule,
        config.trace_loop,
        snapshot.trace_position,
        snapshot.buffer,
        size,
        config.rtt,
        manifest.chunk_duration,
        config.buffer_max,
    )
    if k == 0 and config.startup_excluded:
        rebuffer, startup = 0.0, stall
    else:
        rebuffer, startup = stall, 0.0
    outcome = ChunkOutcome(
        index=k,
        level=level,
        bitrate=manifest.levels[level],
        size=size,
        quality=quality,
        download_time=download_time,
        throughput=throughput,
        rebuffer=rebuffer,
        startup=startup,
        idle=idle,
        buffer=next_buffer,
    )
    nxt = PlayerSnapshot(
        virtual_time=snapshot.virtual_time + elapsed,
        buffer=next_buffer,
        chunk_index=k + 1,
        last_level=level,
        last_quality=quality,
        trace_position=snapshot.trace_position + elapsed,
    )
    if not 0.0 <= next_buffer <= config.buffer_max:
        raise InternalError("buffer left its bounds")
    return outcome, nxt


def build_observation(
    history: Sequence[ChunkOutcome],
    snapshot: PlayerSnapshot,
    manifest: VideoManifest,
    config: PlayerConfig = DEFAULT_PLAYER,
) -> Observation:
    """Assemble the scaled feature view for the imminent chunk decision."""
    k = snapshot.chunk_index
    n_chunks = manifest.n_chunks
    if k < 0 or k >= n_chunks:
        raise DataError(f"chunk index {k} outside the video")
    h = config.history_len
    horizon = config.future_horizon
    n_levels = manifest.n_levels

    throughput_hist = np.zeros(h)
    download_hist = np.zeros(h)
    buffer_hist = np.zeros(h)
    recent = list(history[-h:])
    offset = h - len(recent)
    for i, outcome in enumerate(recent):
        throughput_hist[offset + i] = outcome.throughput / config.throughput_scale
        download_hist[offset + i] = outcome.download_time / config.download_scale
        buffer_hist[offset + i] = outcome.buffer / config.buffer_max

    future_sizes = np.zeros((horizon, n_levels))
    future_quals = np.zeros((horizon, n_levels))
    for f in range(horizon):
        j = k + f
        if j >= n_chunks:
            break
        future_sizes[f] = np.asarray(manifest.sizes[j]) / config.size_scale
        future_quals[f] = np.asarray(manifest.qualities[j]) / config.quality_scale

    last_quality = 0.0
    if snapshot.last_quality is not None:
        last_quality = snapshot.last_quality / config.quality_scale
    remain = (n_chunks - k) / n_chunks
    return Observation(
        throughput_history=throughput_hist,
        download_history=download_hist,
        buffer_history=buffer_hist,
        future_sizes=future_sizes,
        future_qualities=future_quals,
        last_quality=last_quality,
        remain=remain,
    )


def run_session(
    trace: NetworkTrace,
    manifest: VideoManifest,
    decide: Decider,
    config: PlayerConfig = DEFAULT_PLAYER,
    start_offset: float = 0.0,
) -> SessionLog:
    """Play the whole video, asking ``decide`` for each chunk's level.

    Pure given its inputs: repeated calls yield identical logs.
    """
    if manifest.chunk_duration > config.buffer_max:
        raise ConfigError("chunk duration exceeds buffer capacity")
    snapshot = initial_snapshot(start_offset)
    outcomes: list[ChunkOutcome] = []
    ctx = SessionContext(snapshot, outcomes, trace, manifest, config)
    for _ in range(manifest.n_chunks):
        observation = build_observation(outcomes, snapshot, manifest, config)
        ctx.snapshot = snapshot
        level = int(decide(observation, ctx))
        outcome, snapshot = step(snapshot, level, trace, manifest, config)
        outcomes.append(outcome)
    startup_time = outcomes[0].startup if outcomes else 0.0
    return SessionLog(
        outcomes=tuple(outcomes),
        startup_time=startup_time,
        trace_name=trace.name,
        manifest_name=manifest.name,
    )


SESSION_CSV_HEADER = (
    "k,level,bitrate,size_bytes,vmaf,download_s,rebuffer_s,idle_s,buffer_s,throughput_bps"
)


def session_to_csv(log: SessionLog) -> str:
    """Render the per-chunk record as CSV (full float precision)."""
    out = io.StringIO()
    out.write(SESSION_CSV_HEADER + "\n")
    for oc in log.outcomes:
        out.write(
            f"{oc.index},{oc.level},{oc.bitrate!r},{oc.size!r},{oc.quality!r},"
            f"{oc.download_time!r},{oc.rebuffer!r},{oc.idle!r},{oc.buffer!r},"
            f"{oc.throughput!r}\n"
        )
    return out.getvalue()


def session_from_csv(text: str, trace_name: str = "", manifest_name: str = "") -> SessionLog:
    """Rebuild a session record from its CSV form.

    Startup time is not a CSV column, so it reads back as zero; the
    per-chunk fields round-trip exactly.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != SESSION_CSV_HEADER:
        raise DataError("unrecognized session CSV header")
    outcomes = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 10:
            raise DataError("malformed session CSV row")
        k, level = int(parts[0]), int(parts[1])
        (bitrate, size, vmaf, download_s, rebuffer_s, idle_s, buffer_s, tput) = (
            float(v) for v in parts[2:]
        )
        outcomes.append(
            ChunkOutcome(
                index=k,
                level=level,
                bitrate=bitrate,
                size=size,
                quality=vmaf,
                download_time=download_s,
                throughput=tput,
                rebuffer=rebuffer_s,
                startup=0.0,
                idle=idle_s,
                buffer=buffer_s,
            )
        )
    return SessionLog(tuple(outcomes), 0.0, trace_name, manifest_name)
