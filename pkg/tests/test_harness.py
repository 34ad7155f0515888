"""Evaluation harness: scheme grid runs, comparisons, CSV and plots."""
import os

import pytest

from abrlab import (
    ConfigError,
    DataError,
    EvalReport,
    EvalRow,
    NetConfig,
    compare,
    evaluate,
    init_network,
    merge_reports,
    render_plots,
    report_from_csv,
    report_to_csv,
    save_network,
    session_qoe,
)
from abrlab.harness import REPORT_CSV_HEADER
from conftest import flat_trace, seg_trace, tiny_manifest

SCHEMES = ("rb", "bola", "robustmpc", "expert", "offline")


@pytest.fixture(scope="module")
def small_world():
    traces = (
        flat_trace(1.2e6, "ample", duration=120.0),
        seg_trace((0.0, 30.0, 60.0), (0.9e6, 0.15e6, 0.5e6), "dip"),
    )
    manifests = (tiny_manifest(3, n_chunks=12), tiny_manifest(4, n_chunks=12))
    return traces, manifests


@pytest.fixture(scope="module")
def all_scheme_report(small_world):
    traces, manifests = small_world
    return merge_reports(
        *(evaluate(s, traces, manifests, lookahead=4) for s in SCHEMES)
    )


def row(scheme, trace, video, qoe):
    return EvalRow(scheme, trace, video, qoe, 50.0, 0.0, 0.0, 0.0)


class TestEvaluate:
    def test_one_row_per_pair_sorted(self, small_world):
        traces, manifests = small_world
        report = evaluate("rb", traces, manifests)
        assert len(report.rows) == 4
        keys = [(r.scheme, r.trace, r.video) for r in report.rows]
        assert keys == sorted(keys)
        assert report.schemes() == ("rb",)

    def test_offline_tops_every_session(self, all_scheme_report):
        by_session = {}
        for r in all_scheme_report.rows:
            by_session.setdefault((r.trace, r.video), {})[r.scheme] = r.qoe
        for session, scores in by_session.items():
            assert len(scores) == len(SCHEMES)
            for scheme in SCHEMES:
                assert scores["offline"] >= scores[scheme] - 1e-9, (session, scheme)

    def test_expert_beats_the_reactive_baselines_on_average(self, all_scheme_report):
        agg = all_scheme_report.aggregates()
        assert agg["expert"]["qoe"] >= agg["rb"]["qoe"]
        assert agg["expert"]["qoe"] >= agg["bola"]["qoe"]

    def test_ample_bandwidth_never_stalls(self, small_world):
        _traces, manifests = small_world
        report = evaluate("rb", (flat_trace(2e6, "fat", 120.0),), manifests)
        for r in report.rows:
            assert r.rebuffer_s == 0.0

    def test_logs_out_matches_rows(self, small_world):
        traces, manifests = small_world
        logs = {}
        report = evaluate("bola", traces, manifests, logs_out=logs)
        assert set(logs) == {(r.trace, r.video) for r in report.rows}
        for r in report.rows:
            assert session_qoe(logs[(r.trace, r.video)]) == r.qoe
            assert sum(oc.rebuffer for oc in logs[(r.trace, r.video)].outcomes) == r.rebuffer_s

    def test_worker_count_does_not_change_the_report(self, small_world):
        traces, manifests = small_world
        for scheme in ("rb", "robustmpc"):
            serial = evaluate(scheme, traces, manifests)
            threaded = evaluate(scheme, traces, manifests, workers=4)
            assert serial == threaded

    def test_model_path_as_scheme(self, small_world, tmp_path):
        traces, manifests = small_world
        net = init_network(NetConfig(levels=3, conv_kernel=3, conv_channels=8, hidden=16))
        path = str(tmp_path / "tiny.policy")
        save_network(net, path)
        report = evaluate(path, traces, manifests)
        assert len(report.rows) == 4
        assert all(r.scheme == path for r in report.rows)

    def test_guards(self, small_world):
        traces, manifests = small_world
        with pytest.raises(ConfigError):
            evaluate("alphazero", traces, manifests)
        with pytest.raises(ConfigError):
            evaluate("rb", (), manifests)
        with pytest.raises(ConfigError):
            evaluate("rb", traces, ())
        with pytest.raises(ConfigError):
            evaluate("rb", traces, manifests, workers=0)


class TestCompare:
    def test_scheme_against_itself_is_zero(self, all_scheme_report):
        comp = compare(all_scheme_report, "rb", "rb")
        assert comp.improvements == (0.0,) * 4
        assert comp.mean_improvement == 0.0

    def test_hand_built_percentages(self):
        report = EvalReport(rows=(
            row("a", "t1", "v", 100.0),
            row("a", "t2", "v", 50.0),
            row("b", "t1", "v", 80.0),
            row("b", "t2", "v", 50.0),
        ))
        comp = compare(report, "a", "b")
        assert comp.improvements == (25.0, 0.0)
        assert comp.mean_improvement == 12.5
        assert comp.cdf == ((0.0, 0.5), (25.0, 1.0))

    def test_negative_baseline_uses_magnitude(self):
        report = EvalReport(rows=(row("a", "t", "v", -50.0), row("b", "t", "v", -100.0)))
        comp = compare(report, "a", "b")
        assert comp.improvements == (50.0,)

    def test_zero_baseline_rejected(self):
        report = EvalReport(rows=(row("a", "t", "v", 1.0), row("b", "t", "v", 0.0)))
        with pytest.raises(DataError):
            compare(report, "a", "b")

    def test_mismatched_sessions_rejected(self):
        report = EvalReport(rows=(row("a", "t1", "v", 1.0), row("b", "t2", "v", 1.0)))
        with pytest.raises(DataError):
            compare(report, "a", "b")

    def test_unknown_scheme_rejected(self, all_scheme_report):
        with pytest.raises(DataError):
            compare(all_scheme_report, "rb", "alphazero")


class TestReportCsv:
    def test_header(self):
        assert REPORT_CSV_HEADER == "scheme,trace,video,qoe,quality,rebuffer_s,smooth_pos,smooth_neg"

    def test_round_trip_is_exact(self, all_scheme_report):
        text = report_to_csv(all_scheme_report)
        assert text.splitlines()[0] == REPORT_CSV_HEADER
        back = report_from_csv(text)
        assert back == all_scheme_report
        assert back.aggregates() == all_scheme_report.aggregates()

    def test_empty_report_rejected(self):
        with pytest.raises(DataError):
            report_to_csv(EvalReport(rows=()))

    def test_bad_header_rejected(self):
        with pytest.raises(DataError):
            report_from_csv("nope\n1,2,3\n")

    def test_malformed_row_rejected(self):
        with pytest.raises(DataError):
            report_from_csv(REPORT_CSV_HEADER + "\nrb,t,v,1.0\n")

    def test_comma_in_name_rejected(self):
        report = EvalReport(rows=(row("a,b", "t", "v", 1.0),))
        with pytest.raises(DataError):
            report_to_csv(report)


class TestMergeAndPlots:
    def test_merge_sorts_the_union(self):
        first = EvalReport(rows=(row("z", "t", "v", 1.0),))
        second = EvalReport(rows=(row("a", "t", "v", 2.0),))
        merged = merge_reports(first, second)
        assert [r.scheme for r in merged.rows] == ["a", "z"]

    def test_render_writes_panels_and_cdf(self, all_scheme_report, tmp_path):
        prefix = str(tmp_path / "report")
        written = render_plots(all_scheme_report, prefix)
        assert written == [f"{prefix}_bars.png", f"{prefix}_cdf.png"]
        for path in written:
            assert os.path.getsize(path) > 0

    def test_single_scheme_skips_the_cdf(self, small_world, tmp_path):
        traces, manifests = small_world
        report = evaluate("bola", traces, manifests)
        written = render_plots(report, str(tmp_path / "solo"))
        assert len(written) == 1

    def test_missing_baseline_rejected(self, all_scheme_report, tmp_path):
        with pytest.raises(ConfigError):
            render_plots(all_scheme_report, str(tmp_path / "x"), baseline="alphazero")

    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(DataError):
            render_plots(EvalReport(rows=()), str(tmp_path / "x"))
