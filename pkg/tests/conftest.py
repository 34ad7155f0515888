"""Shared builders for traces, manifests, and player states.

Everything here is deterministic: fixed seeds, fixed ladders.  The
48-chunk/6-level manifest and the 20-trace Markov corpus are the
standard workload for the training and evaluation tests.
"""
from __future__ import annotations

import numpy as np
import pytest

from abrlab import (
    MarkovTraceConfig,
    NetworkTrace,
    Observation,
    PlayerSnapshot,
    VideoManifest,
    generate_markov_trace,
)

LADDER6 = (300e3, 750e3, 1200e3, 1850e3, 2850e3, 4300e3)


def flat_trace(rate: float, name: str = "flat", duration: float = 400.0) -> NetworkTrace:
    """Constant-rate trace (bytes/second); two samples satisfy the parser."""
    return NetworkTrace(name, (0.0, duration / 2.0), (rate, rate))


def seg_trace(times, rates, name: str = "segs") -> NetworkTrace:
    return NetworkTrace(name, tuple(float(t) for t in times), tuple(float(r) for r in rates))


def sticky_chain(n: int, stay: float = 0.6) -> tuple[tuple[float, ...], ...]:
    """Birth-death transition matrix that mostly dwells in place."""
    rows = []
    for i in range(n):
        neighbors = [j for j in (i - 1, i + 1) if 0 <= j < n]
        row = [0.0] * n
        row[i] = stay
        for j in neighbors:
            row[j] = (1.0 - stay) / len(neighbors)
        rows.append(tuple(row))
    return tuple(rows)


def build_manifest48(seed: int = 42) -> VideoManifest:
    rng = np.random.default_rng(seed)
    sizes, quals = [], []
    for _ in range(48):
        row = sorted(r / 8.0 * 4.0 * (1.0 + 0.12 * rng.uniform(-1, 1)) for r in LADDER6)
        qrow = [float(min(100.0, 28.0 + 13.0 * m + rng.uniform(-3, 3))) for m in range(6)]
        sizes.append(tuple(row))
        quals.append(tuple(qrow))
    return VideoManifest("vid48", 4.0, LADDER6, tuple(sizes), tuple(quals))


def build_corpus20() -> tuple[NetworkTrace, ...]:
    traces = []
    for i in range(20):
        cfg = MarkovTraceConfig(
            state_rates=tuple(r * 125000.0 for r in (0.4, 0.9, 1.6, 2.6, 4.0)),
            transitions=sticky_chain(5),
            dwell=1.0 + 0.5 * (i % 3),
            noise=0.15,
            duration=400.0,
            seed=100 + i,
        )
        traces.append(generate_markov_trace(cfg, name=f"net{i:02d}"))
    return tuple(traces)


def tiny_manifest(
    seed: int,
    n_chunks: int = 4,
    n_levels: int = 3,
    chunk_duration: float = 4.0,
) -> VideoManifest:
    """Small randomized instance for solver oracles."""
    rng = np.random.default_rng(seed)
    ladder = tuple(300e3 * (2.2**m) * (1.0 + 0.05 * rng.uniform(-1, 1)) for m in range(n_levels))
    sizes, quals = [], []
    for _ in range(n_chunks):
        row = sorted(
            r / 8.0 * chunk_duration * (1.0 + 0.15 * rng.uniform(-1, 1)) for r in ladder
        )
        qrow = [
            float(min(100.0, 25.0 + (65.0 / max(n_levels - 1, 1)) * m + rng.uniform(-4, 4)))
            for m in range(n_levels)
        ]
        sizes.append(tuple(row))
        quals.append(tuple(qrow))
    return VideoManifest(f"tiny{seed}", chunk_duration, ladder, tuple(sizes), tuple(quals))


def case_manifest(
    chunk_sizes: list[float],
    chunk_duration: float = 4.0,
    quality: float = 50.0,
) -> VideoManifest:
    """Single-level manifest with one prescribed size per chunk."""
    return VideoManifest(
        "case",
        chunk_duration,
        (1e6,),
        tuple((s,) for s in chunk_sizes),
        tuple((quality,) for _ in chunk_sizes),
    )


def mid_snapshot(buffer: float, trace_position: float = 0.0, chunk_index: int = 1) -> PlayerSnapshot:
    """Snapshot mid-session, past the startup special case."""
    return PlayerSnapshot(
        virtual_time=trace_position,
        buffer=buffer,
        chunk_index=chunk_index,
        last_level=0,
        last_quality=50.0,
        trace_position=trace_position,
    )


def rand_observation(rng: np.random.Generator, levels: int = 6,
                     history_len: int = 8, future_horizon: int = 7) -> Observation:
    """Synthetic observation with entries on the scales the encoder expects."""
    return Observation(
        throughput_history=rng.uniform(0.0, 2.0, history_len),
        download_history=rng.uniform(0.0, 1.0, history_len),
        buffer_history=rng.uniform(0.0, 6.0, history_len),
        future_sizes=np.sort(rng.uniform(0.0, 1.5, (future_horizon, levels)), axis=1),
        future_qualities=np.sort(rng.uniform(0.0, 1.0, (future_horizon, levels)), axis=1),
        last_quality=float(rng.uniform(0.0, 1.0)),
        remain=float(rng.uniform(0.0, 1.0)),
    )


@pytest.fixture(scope="session")
def manifest48() -> VideoManifest:
    return build_manifest48()


@pytest.fixture(scope="session")
def corpus20() -> tuple[NetworkTrace, ...]:
    return build_corpus20()
