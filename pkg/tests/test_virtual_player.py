"""Player dynamics: hand-computed download/buffer cases and invariants.

Every expected number in HAND_CASES is worked out on paper from the
model: the round trip elapses first, then bytes cross the trace's
piecewise-constant segments; stall = (D - B)+, next buffer =
min((B - D)+ + L, B_max), idle absorbs the overflow, and one clock
advances by D + stall + idle.
"""
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abrlab import (
    ConfigError,
    DataError,
    PlayerConfig,
    PlayerSnapshot,
    VideoManifest,
    build_observation,
    download_chunk,
    initial_snapshot,
    run_session,
    step,
)
from conftest import case_manifest, flat_trace, mid_snapshot, seg_trace, sticky_chain

TOL = 1e-9

FLAT_1MB = flat_trace(1e6, duration=2.0)  # constant 1 MB/s, period 2 s
RAMP = seg_trace((0.0, 1.0), (1e6, 3e6))  # 1 MB/s for 1 s, then 3 MB/s, period 2 s
HILL = seg_trace((0.0, 1.0, 2.0), (1e6, 2e6, 1e6))  # period 3 s, 4 MB per lap

NO_RTT = PlayerConfig(rtt=0.0)
WITH_RTT = PlayerConfig(rtt=0.08)
NO_RTT_COUNT_STARTUP = PlayerConfig(rtt=0.0, startup_excluded=False)
NO_RTT_NO_LOOP = PlayerConfig(rtt=0.0, trace_loop=False)


class TestDownloadChunk:
    def test_constant_rate_with_rtt(self):
        # 2 MB at 1 MB/s after an 80 ms round trip
        d, tput = download_chunk(FLAT_1MB, 0.0, 2e6, 0.08)
        assert d == pytest.approx(2.08, abs=TOL)
        assert tput == pytest.approx(1e6, abs=1e-3)

    def test_rate_change_mid_download(self):
        # 1 MB crosses the first second, the remaining 1.5 MB takes 0.5 s
        d, tput = download_chunk(RAMP, 0.0, 2.5e6, 0.0)
        assert d == pytest.approx(1.5, abs=TOL)
        assert tput == pytest.approx(2.5e6 / 1.5, abs=1e-3)

    def test_one_byte_limit(self):
        d, _ = download_chunk(FLAT_1MB, 0.0, 1.0, 0.0)
        assert d == pytest.approx(1e-6, abs=TOL)

    def test_throughput_excludes_rtt(self):
        d, tput = download_chunk(FLAT_1MB, 0.0, 2e6, 0.08)
        assert tput == pytest.approx(2e6 / (d - 0.08), abs=1e-6)

    def test_input_guards(self):
        with pytest.raises(DataError):
            download_chunk(FLAT_1MB, 0.0, 0.0, 0.0)
        with pytest.raises(DataError):
            download_chunk(FLAT_1MB, 0.0, -5.0, 0.0)
        with pytest.raises(ConfigError):
            download_chunk(FLAT_1MB, 0.0, 1e6, -0.1)
        with pytest.raises(ConfigError):
            download_chunk(FLAT_1MB, -1.0, 1e6, 0.0)


# (name, trace, config, snapshot, size, expected fields)
HAND_CASES = [
    # --- direct substitutions on a constant 1 MB/s link, no rtt ---
    (
        "ample-buffer",  # B=10, D=2: no stall, refill to 12
        FLAT_1MB, NO_RTT, mid_snapshot(10.0), 2e6,
        dict(download_time=2.0, rebuffer=0.0, startup=0.0, idle=0.0, buffer=12.0, elapsed=2.0),
    ),
    (
        "starved-buffer",  # B=1, D=3: 2 s stall, buffer restarts at L
        FLAT_1MB, NO_RTT, mid_snapshot(1.0), 3e6,
        dict(download_time=3.0, rebuffer=2.0, startup=0.0, idle=0.0, buffer=4.0, elapsed=5.0),
    ),
    (
        "overflow-idles",  # B=59, D=0.5: 62.5 would overflow, idle 2.5
        FLAT_1MB, NO_RTT, mid_snapshot(59.0), 0.5e6,
        dict(download_time=0.5, rebuffer=0.0, startup=0.0, idle=2.5, buffer=60.0, elapsed=3.0),
    ),
    (
        "stall-boundary",  # D == B exactly: no stall, drain to zero
        FLAT_1MB, NO_RTT, mid_snapshot(2.0), 2e6,
        dict(download_time=2.0, rebuffer=0.0, startup=0.0, idle=0.0, buffer=4.0, elapsed=2.0),
    ),
    (
        "cap-boundary",  # refill lands exactly on B_max: no idle
        FLAT_1MB, NO_RTT, mid_snapshot(58.0), 2e6,
        dict(download_time=2.0, rebuffer=0.0, startup=0.0, idle=0.0, buffer=60.0, elapsed=2.0),
    ),
    (
        "drain-to-zero",  # B=3, D=3
        FLAT_1MB, NO_RTT, mid_snapshot(3.0), 3e6,
        dict(download_time=3.0, rebuffer=0.0, startup=0.0, idle=0.0, buffer=4.0, elapsed=3.0),
    ),
    (
        "full-buffer-idles-most",  # B=60, D=0.1: idle 3.9
        FLAT_1MB, NO_RTT, mid_snapshot(60.0), 0.1e6,
        dict(download_time=0.1, rebuffer=0.0, startup=0.0, idle=3.9, buffer=60.0, elapsed=4.0),
    ),
    # --- startup billing on chunk 0 ---
    (
        "first-chunk-startup",  # empty buffer, stall billed as startup
        FLAT_1MB, NO_RTT, initial_snapshot(0.0), 1.5e6,
        dict(download_time=1.5, rebuffer=0.0, startup=1.5, idle=0.0, buffer=4.0, elapsed=3.0),
    ),
    (
        "first-chunk-counted",  # same, with startup billed as rebuffer
        FLAT_1MB, NO_RTT_COUNT_STARTUP, initial_snapshot(0.0), 1.5e6,
        dict(download_time=1.5, rebuffer=1.5, startup=0.0, idle=0.0, buffer=4.0, elapsed=3.0),
    ),
    # --- round trip time ---
    (
        "rtt-adds-to-download",  # D = 0.08 + 2.0
        FLAT_1MB, WITH_RTT, mid_snapshot(10.0), 2e6,
        dict(download_time=2.08, rebuffer=0.0, startup=0.0, idle=0.0, buffer=11.92, elapsed=2.08),
    ),
    (
        "rtt-crosses-segment",  # transfer starts at 0.96+0.08 in the 2 MB/s span
        seg_trace((0.0, 1.0), (1e6, 2e6)), WITH_RTT, mid_snapshot(5.0, trace_position=0.96), 1e6,
        dict(download_time=0.58, rebuffer=0.0, startup=0.0, idle=0.0, buffer=8.42, elapsed=0.58),
    ),
    # --- piecewise and wrapping traces ---
    (
        "segment-switch",  # 2.5 MB over the 1->3 MB/s ramp takes 1.5 s
        RAMP, NO_RTT, mid_snapshot(1.0), 2.5e6,
        dict(download_time=1.5, rebuffer=0.5, startup=0.0, idle=0.0, buffer=4.0, elapsed=2.0),
    ),
    (
        "wrap-once",  # 0.5 MB before the period, 0.5 MB after the wrap
        HILL, NO_RTT, mid_snapshot(0.0, trace_position=2.5), 1e6,
        dict(download_time=1.0, rebuffer=1.0, startup=0.0, idle=0.0, buffer=4.0, elapsed=2.0),
    ),
    (
        "wrap-two-periods",  # 9 MB = two 4 MB laps (3 s each) + 1 MB at 1 MB/s
        HILL, NO_RTT, mid_snapshot(10.0), 9e6,
        dict(download_time=7.0, rebuffer=0.0, startup=0.0, idle=0.0, buffer=7.0, elapsed=7.0),
    ),
    (
        "no-loop-extends-final-rate",  # 1 MB in 1 s, then 9 MB at 3 MB/s forever
        RAMP, NO_RTT_NO_LOOP, mid_snapshot(10.0), 10e6,
        dict(download_time=4.0, rebuffer=0.0, startup=0.0, idle=0.0, buffer=10.0, elapsed=4.0),
    ),
    (
        "start-offset",  # chunk 0 fetched from 1.5 s into the ramp at 3 MB/s
        RAMP, NO_RTT, initial_snapshot(1.5), 1.5e6,
        dict(download_time=0.5, rebuffer=0.0, startup=0.5, idle=0.0, buffer=4.0, elapsed=1.0),
    ),
]


class TestStepHandCases:
    @pytest.mark.parametrize(
        "name,trace,config,snapshot,size,expect",
        HAND_CASES,
        ids=[c[0] for c in HAND_CASES],
    )
    def test_hand_case(self, name, trace, config, snapshot, size, expect):
        k = snapshot.chunk_index
        chunk_sizes = [1e5] * k + [size]
        manifest = case_manifest(chunk_sizes)
        outcome, nxt = step(snapshot, 0, trace, manifest, config)
        assert outcome.download_time == pytest.approx(expect["download_time"], abs=TOL)
        assert outcome.rebuffer == pytest.approx(expect["rebuffer"], abs=TOL)
        assert outcome.startup == pytest.approx(expect["startup"], abs=TOL)
        assert outcome.idle == pytest.approx(expect["idle"], abs=TOL)
        assert outcome.buffer == pytest.approx(expect["buffer"], abs=TOL)
        assert nxt.buffer == outcome.buffer
        assert nxt.chunk_index == k + 1
        delta = expect["elapsed"]
        assert nxt.virtual_time - snapshot.virtual_time == pytest.approx(delta, abs=TOL)
        assert nxt.trace_position - snapshot.trace_position == pytest.approx(delta, abs=TOL)
        # a chunk never both stalls and idles
        assert outcome.rebuffer * outcome.idle == 0.0
        assert outcome.throughput == pytest.approx(
            size / (outcome.download_time - config.rtt), rel=1e-12
        )

    def test_three_chunk_conservation(self):
        # by hand: startup 2, rebuffer 2 on the middle chunk, no idle
        manifest = case_manifest([2e6, 6e6, 1e6])
        log = run_session(FLAT_1MB, manifest, lambda obs, ctx: 0, NO_RTT)
        assert log.startup_time == pytest.approx(2.0, abs=TOL)
        assert [oc.rebuffer for oc in log.outcomes] == pytest.approx([0.0, 2.0, 0.0], abs=TOL)
        assert [oc.buffer for oc in log.outcomes] == pytest.approx([4.0, 4.0, 7.0], abs=TOL)
        total = log.startup_time + sum(
            oc.download_time + oc.rebuffer + oc.idle for oc in log.outcomes
        )
        assert total == pytest.approx(13.0, abs=TOL)

    def test_step_guards(self):
        manifest = case_manifest([1e6])
        with pytest.raises(DataError):
            step(mid_snapshot(5.0, chunk_index=1), 0, FLAT_1MB, manifest, NO_RTT)
        with pytest.raises(DataError):
            step(initial_snapshot(), 1, FLAT_1MB, manifest, NO_RTT)
        small = PlayerConfig(buffer_max=2.0)
        with pytest.raises(ConfigError):
            step(initial_snapshot(), 0, FLAT_1MB, manifest, small)

    def test_size_monotone_in_download_time(self):
        base = None
        for size in (0.5e6, 1e6, 2e6, 4e6, 8e6):
            outcome, _ = step(mid_snapshot(30.0), 0, HILL, case_manifest([1e5, size]), NO_RTT)
            if base is not None:
                assert outcome.download_time >= base - TOL
            base = outcome.download_time


@st.composite
def player_worlds(draw):
    n_segs = draw(st.integers(min_value=1, max_value=5))
    rates = [draw(st.floats(min_value=5e4, max_value=5e6)) for _ in range(n_segs + 1)]
    gaps = [draw(st.floats(min_value=0.25, max_value=8.0)) for _ in range(n_segs)]
    times = [0.0]
    for g in gaps:
        times.append(times[-1] + g)
    trace = seg_trace(times, rates)
    n_chunks = draw(st.integers(min_value=1, max_value=6))
    sizes = [draw(st.floats(min_value=1e4, max_value=6e6)) for _ in range(n_chunks)]
    rtt = draw(st.sampled_from([0.0, 0.08]))
    loop = draw(st.booleans())
    offset = draw(st.floats(min_value=0.0, max_value=times[-1]))
    return trace, sizes, PlayerConfig(rtt=rtt, trace_loop=loop), offset


class TestPlayerProperties:
    @given(player_worlds())
    @settings(max_examples=250, deadline=None)
    def test_conservation_and_bounds(self, world):
        trace, sizes, config, offset = world
        manifest = case_manifest(sizes)
        log = run_session(trace, manifest, lambda obs, ctx: 0, config, start_offset=offset)
        snapshot = initial_snapshot(offset)
        for oc in log.outcomes:
            assert 0.0 <= oc.buffer <= config.buffer_max + TOL
            assert oc.rebuffer >= 0.0 and oc.idle >= 0.0 and oc.download_time > 0.0
            assert oc.rebuffer * oc.idle == 0.0
        # replay to recover the final clock, then check the identity
        for oc in log.outcomes:
            _, snapshot = step(snapshot, oc.level, trace, manifest, config)
        total = log.startup_time + sum(
            oc.download_time + oc.rebuffer + oc.idle for oc in log.outcomes
        )
        assert snapshot.virtual_time == pytest.approx(total, abs=TOL)

    @given(player_worlds())
    @settings(max_examples=100, deadline=None)
    def test_rerun_bit_identical(self, world):
        trace, sizes, config, offset = world
        manifest = case_manifest(sizes)
        a = run_session(trace, manifest, lambda obs, ctx: 0, config, start_offset=offset)
        b = run_session(trace, manifest, lambda obs, ctx: 0, config, start_offset=offset)
        assert a == b


class TestObservation:
    def test_fresh_session_all_zero_history(self, manifest48):
        obs = build_observation([], initial_snapshot(), manifest48)
        assert not obs.throughput_history.any()
        assert not obs.download_history.any()
        assert not obs.buffer_history.any()
        assert obs.last_quality == 0.0
        assert obs.remain == 1.0

    def test_remain_at_final_chunk(self, manifest48):
        snap = mid_snapshot(10.0, chunk_index=47)
        obs = build_observation([], snap, manifest48)
        assert obs.remain == pytest.approx(1.0 / 48.0, abs=TOL)

    def test_throughput_scaling(self):
        # one finished chunk at exactly 1 Mbps lands in the last slot as 0.1
        trace = flat_trace(125000.0)
        manifest = case_manifest([125000.0, 125000.0], chunk_duration=4.0)
        outcome, snap = step(initial_snapshot(), 0, trace, manifest, NO_RTT)
        obs = build_observation([outcome], snap, manifest)
        assert obs.throughput_history[-1] == pytest.approx(0.1, abs=1e-12)
        assert obs.throughput_history[:-1].tolist() == [0.0] * 7

    def test_future_matrices_zero_padded_past_end(self):
        manifest = case_manifest([1e6, 2e6])
        snap = mid_snapshot(5.0, chunk_index=1)
        obs = build_observation([], snap, manifest)
        assert obs.future_sizes.shape == (7, 1)
        assert obs.future_sizes[0, 0] > 0.0
        assert not obs.future_sizes[1:].any()
        assert not obs.future_qualities[1:].any()

    def test_shapes_fixed_everywhere(self, manifest48, corpus20):
        seen = []

        def spy(obs, ctx):
            seen.append(
                (
                    obs.throughput_history.shape,
                    obs.future_sizes.shape,
                    obs.future_qualities.shape,
                )
            )
            return 0

        run_session(corpus20[0], manifest48, spy)
        assert len(seen) == 48
        assert set(seen) == {((8,), (7, 6), (7, 6))}


class TestSessionCsv:
    def test_round_trip_exact(self, manifest48, corpus20):
        from abrlab import session_from_csv, session_to_csv

        log = run_session(corpus20[1], manifest48, lambda obs, ctx: ctx.snapshot.chunk_index % 6)
        text = session_to_csv(log)
        again = session_from_csv(text, log.trace_name, log.manifest_name)
        for a, b in zip(log.outcomes, again.outcomes):
            assert a.download_time == b.download_time
            assert a.rebuffer == b.rebuffer
            assert a.buffer == b.buffer
            assert a.throughput == b.throughput

    def test_bad_header_rejected(self):
        from abrlab import session_from_csv

        with pytest.raises(DataError):
            session_from_csv("nope\n1,2\n")
