"""Chunk and session scoring: closed-form anchors and decomposition."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abrlab import (
    ChunkOutcome,
    ConfigError,
    DataError,
    QoeParams,
    SessionLog,
    chunk_qoe,
    session_qoe,
)

TOL = 1e-9


def make_log(qualities, rebuffers):
    outcomes = tuple(
        ChunkOutcome(
            index=i,
            level=0,
            bitrate=1e6,
            size=5e5,
            quality=q,
            download_time=1.0,
            throughput=1e6,
            rebuffer=t,
            startup=0.0,
            idle=0.0,
            buffer=10.0,
        )
        for i, (q, t) in enumerate(zip(qualities, rebuffers))
    )
    return SessionLog(outcomes, 0.0, "t", "m")


class TestChunkAnchors:
    def test_upward_switch(self):
        # 0.8469*90 + 0.2979*(90-80) = 79.200
        assert chunk_qoe(80.0, 90.0, 0.0) == pytest.approx(79.200, abs=TOL)

    def test_downward_switch_with_stall(self):
        # 0.8469*80 - 28.7959*1 - 1.0610*(90-80) = 28.3461
        assert chunk_qoe(90.0, 80.0, 1.0) == pytest.approx(28.3461, abs=TOL)

    def test_first_chunk_no_smoothness(self):
        # 0.8469*70 = 59.283
        assert chunk_qoe(None, 70.0, 0.0) == pytest.approx(59.283, abs=TOL)

    def test_equal_quality_no_smoothness_term(self):
        flat = chunk_qoe(50.0, 50.0, 0.0)
        fresh = chunk_qoe(None, 50.0, 0.0)
        assert flat == fresh

    def test_custom_params(self):
        params = QoeParams(1.0, 10.0, 0.0, 2.0)
        assert chunk_qoe(60.0, 40.0, 0.5, params) == pytest.approx(
            40.0 - 5.0 - 40.0, abs=TOL
        )


class TestSession:
    def test_three_chunk_hand_total(self):
        # c1 = 0.8469*70                         = 59.283
        # c2 = 0.8469*90 - 28.7959*0.5 + 0.2979*20 = 67.78105
        # c3 = 0.8469*60 - 1.0610*30             = 18.984
        log = make_log([70.0, 90.0, 60.0], [0.0, 0.5, 0.0])
        assert session_qoe(log) == pytest.approx(146.04805, abs=TOL)

    def test_empty_session_rejected(self):
        with pytest.raises(DataError):
            session_qoe(SessionLog((), 0.0, "t", "m"))

    @given(
        qualities=st.lists(st.floats(min_value=0.0, max_value=100.0), min_size=1, max_size=30),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=200, deadline=None)
    def test_decomposition_matches_vector_form(self, qualities, seed):
        rng = np.random.default_rng(seed)
        rebuffers = rng.uniform(0.0, 3.0, size=len(qualities)).tolist()
        log = make_log(qualities, rebuffers)
        q = np.asarray(qualities)
        t = np.asarray(rebuffers)
        diff = np.diff(q)
        expected = (
            0.8469 * q.sum()
            - 28.7959 * t.sum()
            + 0.2979 * diff[diff > 0].sum()
            - 1.0610 * (-diff[diff < 0]).sum()
        )
        assert session_qoe(log) == pytest.approx(float(expected), abs=TOL)


class TestParams:
    def test_defaults_are_the_reference_weights(self):
        p = QoeParams()
        assert (p.quality_weight, p.rebuffer_weight) == (0.8469, 28.7959)
        assert (p.smooth_up_weight, p.smooth_down_weight) == (0.2979, 1.0610)

    def test_penalties_must_be_non_negative(self):
        with pytest.raises(ConfigError):
            QoeParams(rebuffer_weight=-1.0)
        with pytest.raises(ConfigError):
            QoeParams(smooth_down_weight=-0.5)
        with pytest.raises(ConfigError):
            QoeParams(quality_weight=float("nan"))
