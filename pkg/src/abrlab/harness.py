"""Evaluation matrices across schemes, comparisons, and report files.

Runs each scheme over a (trace, manifest) grid through the virtual
player, collects per-session QoE and its components into rows, and
derives comparisons (per-session improvement distributions) and files
(CSV always, plots on request) from those rows.  Rows are sorted by
(scheme, trace, video) so repeated runs emit byte-identical reports.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .baselines import DEFAULT_BOLA, BolaParams, RobustMpc, bola_decide, rb_decide
from .errors import ConfigError, DataError
from .media import NetworkTrace, VideoManifest
from .player import (
    DEFAULT_PLAYER,
    Decider,
    PlayerConfig,
    SessionLog,
    run_session,
)
from .policy import PolicyNetwork, load_network
from .qoe import DEFAULT_QOE, QoeParams, session_qoe
from .solver import instant_solve, offline_optimal
from .trainer import greedy_decider

NAMED_SCHEMES = ("rb", "bola", "robustmpc", "expert", "offline")


@dataclass(frozen=True)
class EvalRow:
    """One (scheme, trace, video) session, reduced to its metrics."""

    scheme: str
    trace: str
    video: str
    qoe: float
    quality: float
    rebuffer_s: float
    smooth_pos: float
    smooth_neg: float


@dataclass(frozen=True)
class EvalReport:
    """Ordered collection of evaluation rows."""

    rows: tuple[EvalRow, ...]

    def schemes(self) -> tuple[str, ...]:
        return tuple(sorted({row.scheme for row in self.rows}))

    def aggregates(self) -> dict[str, dict[str, float]]:
        """Per-scheme means, recomputed from the rows."""
        out: dict[str, dict[str, float]] = {}
        for scheme in self.schemes():
            rows = [row for row in self.rows if row.scheme == scheme]
            n = len(rows)
            out[scheme] = {
                "qoe": sum(r.qoe for r in rows) / n,
                "quality": sum(r.quality for r in rows) / n,
                "rebuffer_s": sum(r.rebuffer_s for r in rows) / n,
                "smooth_pos": sum(r.smooth_pos for r in rows) / n,
                "smooth_neg": sum(r.smooth_neg for r in rows) / n,
            }
        return out


def session_metrics(log: SessionLog, params: QoeParams = DEFAULT_QOE) -> dict[str, float]:
    """Reduce one session to the report's metric columns."""
    qualities = [oc.quality for oc in log.outcomes]
    smooth_pos = sum(
        max(b - a, 0.0) for a, b in zip(qualities, qualities[1:])
    )
    smooth_neg = sum(
        max(a - b, 0.0) for a, b in zip(qualities, qualities[1:])
    )
    return {
        "qoe": session_qoe(log, params),
        "quality": sum(qualities) / len(qualities),
        "rebuffer_s": sum(oc.rebuffer for oc in log.outcomes),
        "smooth_pos": smooth_pos,
        "smooth_neg": smooth_neg,
    }


def _resolve_scheme(scheme: str) -> tuple[str, PolicyNetwork | None]:
    """A scheme is a known name or a path to a saved policy."""
    if scheme in NAMED_SCHEMES:
        return scheme, None
    if os.path.exists(scheme):
        return "model", load_network(scheme)
    raise ConfigError(
        f"unknown scheme {scheme!r}: expected one of {', '.join(NAMED_SCHEMES)} "
        "or a model file path"
    )


def _make_decider(
    kind: str,
    net: PolicyNetwork | None,
    lookahead: int,
    qoe: QoeParams,
    player: PlayerConfig,
    bola: BolaParams,
    mpc_horizon: int,
) -> Decider:
    """Fresh decider for one session (receding-horizon control keeps state)."""
    if kind == "rb":

        def decide(observation, ctx):
            history = [oc.throughput for oc in ctx.outcomes]
            return rb_decide(history, ctx.manifest, ctx.snapshot.chunk_index)

        return decide
    if kind == "bola":

        def decide(observation, ctx):
            return bola_decide(ctx.snapshot.buffer, ctx.manifest, ctx.snapshot.chunk_index, bola)

        return decide
    if kind == "robustmpc":
        controller = RobustMpc(horizon=mpc_horizon, params=qoe, config=player)
        return controller.decide
    if kind == "expert":

        def decide(observation, ctx):
            return instant_solve(
                ctx.snapshot, ctx.trace, ctx.manifest, lookahead, qoe, ctx.config
            ).action

        return decide
    if kind == "model":
        assert net is not None
        return greedy_decider(net)
    raise ConfigError(f"unknown scheme {kind!r}")


def evaluate(
    scheme: str,
    traces: list[NetworkTrace] | tuple[NetworkTrace, ...],
    manifests: list[VideoManifest] | tuple[VideoManifest, ...],
    lookahead: int = 8,
    qoe: QoeParams = DEFAULT_QOE,
    player: PlayerConfig = DEFAULT_PLAYER,
    workers: int = 1,
    bola: BolaParams | None = None,
    mpc_horizon: int = 5,
    logs_out: dict | None = None,
) -> EvalReport:
    """Run one scheme over every (trace, manifest) pair.

    Deterministic: rows come back sorted regardless of worker
    interleavings.  Pass a dict as ``logs_out`` to also receive each
    session's full log keyed by (trace name, video name).
    """
    if not traces:
        raise ConfigError("no traces to evaluate")
    if not manifests:
        raise ConfigError("no manifests to evaluate")
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    kind, net = _resolve_scheme(scheme)
    if bola is None:
        bola = BolaParams(buffer_max=player.buffer_max)

    def one_session(pair: tuple[NetworkTrace, VideoManifest]) -> tuple[str, str, SessionLog]:
        trace, manifest = pair
        if kind == "offline":
            log, _score = offline_optimal(trace, manifest, player, qoe)
        else:
            decider = _make_decider(kind, net, lookahead, qoe, player, bola, mpc_horizon)
            log = run_session(trace, manifest, decider, player)
        return trace.name, manifest.name, log

    pairs = [(trace, manifest) for trace in traces for manifest in manifests]
    if workers == 1:
        results = [one_session(pair) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_session, pairs))

    rows = []
    for trace_name, video_name, log in results:
        if logs_out is not None:
            logs_out[(trace_name, video_name)] = log
        metrics = session_metrics(log, qoe)
        rows.append(EvalRow(scheme=scheme, trace=trace_name, video=video_name, **metrics))
    rows.sort(key=lambda r: (r.scheme, r.trace, r.video))
    return EvalReport(rows=tuple(rows))


def merge_reports(*reports: EvalReport) -> EvalReport:
    """Combine per-scheme reports into one sorted report."""
    rows = [row for report in reports for row in report.rows]
    rows.sort(key=lambda r: (r.scheme, r.trace, r.video))
    return EvalReport(rows=tuple(rows))


@dataclass(frozen=True)
class Comparison:
    """Per-session QoE improvement of scheme_a over scheme_b, in percent."""

    scheme_a: str
    scheme_b: str
    improvements: tuple[float, ...]
    mean_improvement: float
    cdf: tuple[tuple[float, float], ...]


def compare(report: EvalReport, scheme_a: str, scheme_b: str) -> Comparison:
    """Improvement distribution of ``scheme_a`` over ``scheme_b``.

    Improvement per shared (trace, video) session is
    100 * (qoe_a - qoe_b) / |qoe_b|; the CDF pairs each sorted
    improvement with the fraction of sessions at or below it.
    """
    by_session_a = {(r.trace, r.video): r.qoe for r in report.rows if r.scheme == scheme_a}
    by_session_b = {(r.trace, r.video): r.qoe for r in report.rows if r.scheme == scheme_b}
    if not by_session_a:
        raise DataError(f"scheme {scheme_a!r} not in report")
    if not by_session_b:
        raise DataError(f"scheme {scheme_b!r} not in report")
    if set(by_session_a) != set(by_session_b):
        raise DataError("mismatched session sets between schemes")
    improvements = []
    for key in sorted(by_session_a):
        a, b = by_session_a[key], by_session_b[key]
        if a == b:
            improvements.append(0.0)
        elif b == 0.0:
            raise DataError(f"zero baseline QoE for session {key}")
        else:
            improvements.append(100.0 * (a - b) / abs(b))
    ordered = sorted(improvements)
    n = len(ordered)
    cdf = tuple((value, (i + 1) / n) for i, value in enumerate(ordered))
    return Comparison(
        scheme_a=scheme_a,
        scheme_b=scheme_b,
        improvements=tuple(improvements),
        mean_improvement=sum(improvements) / n,
        cdf=cdf,
    )


REPORT_CSV_HEADER = "scheme,trace,video,qoe,quality,rebuffer_s,smooth_pos,smooth_neg"


def report_to_csv(report: EvalReport) -> str:
    """Render a report as CSV (full float precision)."""
    if not report.rows:
        raise DataError("empty report")
    lines = [REPORT_CSV_HEADER]
    for row in report.rows:
        for name in (row.scheme, row.trace, row.video):
            if "," in name or "\n" in name:
                raise DataError(f"name {name!r} cannot appear in CSV")
        lines.append(
            f"{row.scheme},{row.trace},{row.video},{row.qoe!r},{row.quality!r},"
            f"{row.rebuffer_s!r},{row.smooth_pos!r},{row.smooth_neg!r}"
        )
    return "\n".join(lines) + "\n"


def report_from_csv(text: str) -> EvalReport:
    """Rebuild a report from its CSV form; fields round-trip exactly."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != REPORT_CSV_HEADER:
        raise DataError("unrecognized report CSV header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 8:
            raise DataError("malformed report CSV row")
        rows.append(
            EvalRow(
                scheme=parts[0],
                trace=parts[1],
                video=parts[2],
                qoe=float(parts[3]),
                quality=float(parts[4]),
                rebuffer_s=float(parts[5]),
                smooth_pos=float(parts[6]),
                smooth_neg=float(parts[7]),
            )
        )
    return EvalReport(rows=tuple(rows))


def render_plots(
    report: EvalReport,
    path_prefix: str,
    baseline: str | None = None,
) -> list[str]:
    """Write metric bar panels and, given >= 2 schemes, improvement CDFs.

    Returns the written file paths.  ``baseline`` names the comparison
    denominator for the CDF panel (default: rb when present, else the
    first scheme)."""
    if not report.rows:
        raise DataError("empty report")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    schemes = report.schemes()
    agg = report.aggregates()
    written: list[str] = []

    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [
        ("qoe", "mean QoE"),
        ("quality", "mean quality (VMAF)"),
        ("rebuffer_s", "mean rebuffer (s)"),
        ("smooth_neg", "mean negative smoothness"),
    ]
    for ax, (key, label) in zip(axes.flat, panels):
        ax.bar(range(len(schemes)), [agg[s][key] for s in schemes], color="#4878a8")
        ax.set_xticks(range(len(schemes)))
        ax.set_xticklabels(schemes, rotation=20, ha="right", fontsize=8)
        ax.set_title(label, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    bars_path = f"{path_prefix}_bars.png"
    fig.savefig(bars_path, dpi=120)
    plt.close(fig)
    written.append(bars_path)

    if len(schemes) >= 2:
        if baseline is None:
            baseline = "rb" if "rb" in schemes else schemes[0]
        if baseline not in schemes:
            raise ConfigError(f"baseline scheme {baseline!r} not in report")
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for scheme in schemes:
            if scheme == baseline:
                continue
            comp = compare(report, scheme, baseline)
            xs = [point[0] for point in comp.cdf]
            ys = [point[1] for point in comp.cdf]
            ax.step(xs, ys, where="post", label=f"{scheme} vs {baseline}")
        ax.set_xlabel("QoE improvement (%)")
        ax.set_ylabel("CDF")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        cdf_path = f"{path_prefix}_cdf.png"
        fig.savefig(cdf_path, dpi=120)
        plt.close(fig)
        written.append(cdf_path)
    return written
