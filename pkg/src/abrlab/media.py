"""Network traces and video manifests.

Canonical units are seconds and bytes/second everywhere inside the
package; megabits/second appear only at the file boundary
(1 Mbps = 125,000 bytes/second).

Trace files are plain text, one ``SECONDS MBPS`` pair per line.  A trace
is interpreted as a piecewise-constant throughput timeline: each sample
holds from its timestamp until the next sample's timestamp, the first
sample extends back to time zero, and the last sample holds for the same
span as the gap before it (after which the timeline either wraps, when
the player loops traces, or the final throughput extends forever).

Manifests are JSON documents with keys ``chunk_duration`` (seconds),
``levels`` (nominal ladder, bits/second, ascending) and ``chunks``: one
entry per chunk, each a per-level list of ``{"size": bytes,
"vmaf": score}`` records.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, DataError

BYTES_PER_SECOND_PER_MBPS = 125_000.0


class QualityInversionWarning(UserWarning):
    """A higher ladder rung reported a lower perceptual score."""


@dataclass(frozen=True)
class NetworkTrace:
    """Immutable piecewise-constant throughput timeline.

    ``times`` are strictly increasing seconds (first entry >= 0);
    ``rates`` are the matching throughputs in bytes/second.
    """

    name: str
    times: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times) != len(self.rates):
            raise DataError("times and rates length mismatch")
        if len(self.times) < 2:
            raise DataError("fewer than 2 samples")
        prev = -math.inf
        for t in self.times:
            if not math.isfinite(t):
                raise DataError("non-finite timestamp")
            if t <= prev:
                raise DataError("non-increasing timestamp")
            prev = t
        if self.times[0] < 0.0:
            raise DataError("negative timestamp")
        for v in self.rates:
            if not math.isfinite(v) or v <= 0.0:
                raise DataError("non-positive throughput")

    @property
    def period(self) -> float:
        """Wrap period: the last sample lasts as long as the gap before it."""
        return self.times[-1] + (self.times[-1] - self.times[-2])

    @property
    def samples(self) -> tuple[tuple[float, float], ...]:
        return tuple(zip(self.times, self.rates))

    @cached_property
    def schedule(self) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...], float, float]:
        """Cumulative byte schedule: (bounds, rates, cum, period, total).

        ``bounds[j]`` starts the j-th constant-rate span (the first spans
        back to zero, so ``times[0]`` is not a boundary), ``cum[j]`` is
        the bytes moved from zero to ``bounds[j]``, and ``total`` the
        bytes in one full period.  Lets byte offsets convert to timeline
        positions with a bisect instead of a segment walk.
        """
        bounds = (0.0,) + self.times[1:]
        cum = [0.0]
        for j in range(1, len(bounds)):
            cum.append(cum[-1] + self.rates[j - 1] * (bounds[j] - bounds[j - 1]))
        period = self.period
        total = cum[-1] + self.rates[-1] * (period - bounds[-1])
        return bounds, self.rates, tuple(cum), period, total

    @property
    def mean_rate(self) -> float:
        """Time-weighted mean throughput over one period, bytes/second."""
        total = 0.0
        for i, rate in enumerate(self.rates):
            start = self.times[i] if i > 0 else 0.0
            end = self.times[i + 1] if i + 1 < len(self.times) else self.period
            total += rate * (end - start)
        return total / self.period


def parse_trace(text: str, name: str = "trace") -> NetworkTrace:
    """Parse ``SECONDS MBPS`` lines into a NetworkTrace.

    Blank lines are ignored.  Errors carry 1-based line numbers.
    """
    times: list[float] = []
    rates: list[float] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"malformed line {lineno}: {raw!r}")
        try:
            t = float(parts[0])
            mbps = float(parts[1])
        except ValueError:
            raise DataError(f"malformed line {lineno}: {raw!r}") from None
        if not (math.isfinite(t) and math.isfinite(mbps)):
            raise DataError(f"malformed line {lineno}: {raw!r}")
        if t < 0.0:
            raise DataError(f"negative timestamp at line {lineno}")
        if times and t <= times[-1]:
            raise DataError(f"non-increasing timestamp at line {lineno}")
        if mbps <= 0.0:
            raise DataError(f"non-positive throughput at line {lineno}")
        times.append(t)
        rates.append(mbps * BYTES_PER_SECOND_PER_MBPS)
    if not times:
        raise DataError("empty trace")
    if len(times) < 2:
        raise DataError("fewer than 2 samples")
    return NetworkTrace(name, tuple(times), tuple(rates))


def _mbps_repr(rate: float) -> str:
    """Shortest Mbps string that parses back to exactly ``rate`` bytes/s.

    Division by 125,000 is not exactly invertible in binary floating
    point, so nudge the quotient by ulps until multiplying back lands on
    the original value.  Rates produced by parse_trace or the trace
    generator always have such a representation within a few ulps.
    """
    m = rate / BYTES_PER_SECOND_PER_MBPS
    if m * BYTES_PER_SECOND_PER_MBPS == rate:
        return repr(m)
    lo = hi = m
    for _ in range(8):
        lo = math.nextafter(lo, -math.inf)
        if lo * BYTES_PER_SECOND_PER_MBPS == rate:
            return repr(lo)
        hi = math.nextafter(hi, math.inf)
        if hi * BYTES_PER_SECOND_PER_MBPS == rate:
            return repr(hi)
    return repr(m)


def serialize_trace(trace: NetworkTrace) -> str:
    """Render a trace in the ``SECONDS MBPS`` file format."""
    lines = [f"{t!r} {_mbps_repr(v)}" for t, v in zip(trace.times, trace.rates)]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MarkovTraceConfig:
    """Synthetic trace generator settings.

    ``state_rates`` are per-state mean throughputs in bytes/second;
    ``transitions[i][j]`` is the probability of moving from state i to
    state j after each dwell period.  Emitted samples are the state mean
    scaled by ``1 + u`` with ``u`` uniform on ``[-noise, +noise]``.
    """

    state_rates: tuple[float, ...]
    transitions: tuple[tuple[float, ...], ...]
    dwell: float = 1.0
    noise: float = 0.0
    duration: float = 320.0
    seed: int = 0

    def __post_init__(self) -> None:
        n = len(self.state_rates)
        if n == 0:
            raise ConfigError("state_rates must be non-empty")
        for rate in self.state_rates:
            if not math.isfinite(rate) or rate <= 0.0:
                raise ConfigError("state rates must be positive and finite")
        if len(self.transitions) != n:
            raise ConfigError("transition matrix must be square over the states")
        for row in self.transitions:
            if len(row) != n:
                raise ConfigError("transition matrix must be square over the states")
            if any(p < 0.0 or not math.isfinite(p) for p in row):
                raise ConfigError("transition probabilities must be non-negative")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ConfigError("transition matrix rows must sum to 1")
        if self.dwell <= 0.0:
            raise ConfigError("dwell must be positive")
        if self.duration < self.dwell:
            raise ConfigError("duration must be at least one dwell period")
        if not 0.0 <= self.noise < 1.0:
            raise ConfigError("noise must lie in [0, 1)")


def generate_markov_trace(config: MarkovTraceConfig, name: str | None = None) -> NetworkTrace:
    """Generate one trace: a seeded Markov walk over throughput states.

    Emits one sample per dwell period.  Rates are quantized through the
    Mbps file grid so that serialize/parse round-trips are exact.
    """
    n_samples = int(math.floor(config.duration / config.dwell + 1e-9))
    if n_samples < 2:
        raise ConfigError("duration too short: a trace needs at least 2 samples")
    rng = np.random.default_rng(config.seed)
    n_states = len(config.state_rates)
    rows = [np.asarray(row, dtype=np.float64) for row in config.transitions]
    state = int(rng.integers(n_states))
    times: list[float] = []
    rates: list[float] = []
    for i in range(n_samples):
        mean = config.state_rates[state]
        u = float(rng.uniform(-config.noise, config.noise)) if config.noise > 0.0 else 0.0
        mbps = (mean * (1.0 + u)) / BYTES_PER_SECOND_PER_MBPS
        times.append(i * config.dwell)
        rates.append(mbps * BYTES_PER_SECOND_PER_MBPS)
        if i + 1 < n_samples:
            state = int(rng.choice(n_states, p=rows[state]))
    if name is None:
        name = f"markov-{config.seed}"
    return NetworkTrace(name, tuple(times), tuple(rates))


@dataclass(frozen=True)
class VideoManifest:
    """Immutable per-chunk encoding ladder.

    ``sizes[k][m]`` is the byte size and ``qualities[k][m]`` the
    perceptual score (0-100) of chunk ``k`` encoded at ladder rung ``m``.
    Sizes must increase strictly with the rung; a quality inversion only
    warns, since real encodes occasionally produce one.
    """

    name: str
    chunk_duration: float
    levels: tuple[float, ...]
    sizes: tuple[tuple[float, ...], ...]
    qualities: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not math.isfinite(self.chunk_duration) or self.chunk_duration <= 0.0:
            raise DataError("chunk_duration must be positive")
        if len(self.levels) == 0:
            raise DataError("empty ladder")
        prev = 0.0
        for rate in self.levels:
            if not math.isfinite(rate) or rate <= prev:
                raise DataError("ladder bitrates must be positive and ascending")
            prev = rate
        if len(self.sizes) == 0:
            raise DataError("no chunks")
        if len(self.sizes) != len(self.qualities):
            raise DataError("sizes and qualities length mismatch")
        n_levels = len(self.levels)
        for k, (row_s, row_q) in enumerate(zip(self.sizes, self.qualities)):
            if len(row_s) != n_levels or len(row_q) != n_levels:
                raise DataError(f"chunk {k} does not cover every ladder rung")
            prev_size = 0.0
            for m, size in enumerate(row_s):
                if not math.isfinite(size) or size <= prev_size:
                    raise DataError(f"sizes not increasing in chunk {k}")
                prev_size = size
            for m, q in enumerate(row_q):
                if not math.isfinite(q) or q < 0.0 or q > 100.0:
                    raise DataError(f"vmaf out of range in chunk {k} level {m}")
                if m > 0 and q < row_q[m - 1]:
                    warnings.warn(
                        f"quality inversion in chunk {k}: level {m} scores below level {m - 1}",
                        QualityInversionWarning,
                        stacklevel=2,
                    )

    @property
    def n_chunks(self) -> int:
        return len(self.sizes)

    @property
    def n_levels(self) -> int:
        return len(self.levels)


def parse_manifest(text: str, name: str = "manifest") -> VideoManifest:
    """Parse and validate a manifest JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid manifest JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DataError("manifest must be a JSON object")
    for key in ("chunk_duration", "levels", "chunks"):
        if key not in doc:
            raise DataError(f"manifest missing field {key!r}")
    try:
        chunk_duration = float(doc["chunk_duration"])
        levels = tuple(float(v) for v in doc["levels"])
        sizes = tuple(
            tuple(float(entry["size"]) for entry in chunk) for chunk in doc["chunks"]
        )
        qualities = tuple(
            tuple(float(entry["vmaf"]) for entry in chunk) for chunk in doc["chunks"]
        )
    except (TypeError, KeyError, ValueError) as exc:
        raise DataError(f"malformed manifest entry: {exc}") from None
    return VideoManifest(
        name=str(doc.get("name", name)),
        chunk_duration=chunk_duration,
        levels=levels,
        sizes=sizes,
        qualities=qualities,
    )


def serialize_manifest(manifest: VideoManifest) -> str:
    """Render a manifest back to its JSON document form."""
    doc = {
        "name": manifest.name,
        "chunk_duration": manifest.chunk_duration,
        "levels": list(manifest.levels),
        "chunks": [
            [
                {"size": size, "vmaf": q}
                for size, q in zip(row_s, row_q)
            ]
            for row_s, row_q in zip(manifest.sizes, manifest.qualities)
        ],
    }
    return json.dumps(doc, indent=2) + "\n"
