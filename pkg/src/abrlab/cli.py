"""Command-line entry point.

Subcommands cover the whole pipeline: synthetic trace generation,
one-shot solver queries, imitation training, scheme evaluation grids,
report comparison, and report/plot emission.  A JSON config file can
supply any subcommand's flag values; explicit flags win over the file.

Exit codes: 0 success, 2 bad configuration, 3 bad input data,
4 internal invariant failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import AbrLabError, ConfigError
from .harness import (
    compare,
    evaluate,
    merge_reports,
    render_plots,
    report_from_csv,
    report_to_csv,
)
from .media import (
    BYTES_PER_SECOND_PER_MBPS,
    MarkovTraceConfig,
    NetworkTrace,
    VideoManifest,
    generate_markov_trace,
    parse_manifest,
    parse_trace,
    serialize_trace,
)
from .player import DEFAULT_PLAYER, PlayerConfig, PlayerSnapshot, session_to_csv
from .policy import save_network
from .qoe import DEFAULT_QOE, QoeParams
from .solver import brute_force_solve, instant_solve
from .trainer import TrainConfig, curve_to_csv, train

ENV_CORPUS = "ABRLAB_CORPUS"


def _add_qoe_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--qoe-alpha", type=float, default=DEFAULT_QOE.quality_weight,
                   help="quality weight")
    p.add_argument("--qoe-beta", type=float, default=DEFAULT_QOE.rebuffer_weight,
                   help="rebuffer penalty per second")
    p.add_argument("--qoe-gamma", type=float, default=DEFAULT_QOE.smooth_up_weight,
                   help="upward smoothness weight")
    p.add_argument("--qoe-delta", type=float, default=DEFAULT_QOE.smooth_down_weight,
                   help="downward smoothness penalty")


def _qoe_from_args(args: argparse.Namespace) -> QoeParams:
    return QoeParams(
        quality_weight=args.qoe_alpha,
        rebuffer_weight=args.qoe_beta,
        smooth_up_weight=args.qoe_gamma,
        smooth_down_weight=args.qoe_delta,
    )


def _add_player_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--buffer-max", type=float, default=DEFAULT_PLAYER.buffer_max,
                   help="client buffer capacity, seconds")
    p.add_argument("--rtt", type=float, default=DEFAULT_PLAYER.rtt,
                   help="per-chunk request round trip, seconds")
    p.add_argument("--history-len", type=int, default=DEFAULT_PLAYER.history_len,
                   help="observation history length, chunks")
    p.add_argument("--future-horizon", type=int, default=DEFAULT_PLAYER.future_horizon,
                   help="observation future window, chunks")
    p.add_argument("--no-loop", action="store_true",
                   help="hold the trace's final rate instead of looping")
    p.add_argument("--include-startup", action="store_true",
                   help="charge the first chunk's stall as rebuffer time")


def _player_from_args(args: argparse.Namespace) -> PlayerConfig:
    return PlayerConfig(
        buffer_max=args.buffer_max,
        rtt=args.rtt,
        history_len=args.history_len,
        future_horizon=args.future_horizon,
        trace_loop=not args.no_loop,
        startup_excluded=not args.include_startup,
    )


def _expand_paths(sources: list[str], kind: str) -> list[str]:
    """Files pass through; directories contribute their files, sorted."""
    paths: list[str] = []
    for source in sources:
        if os.path.isdir(source):
            entries = sorted(
                os.path.join(source, entry)
                for entry in os.listdir(source)
                if os.path.isfile(os.path.join(source, entry))
            )
            if not entries:
                raise ConfigError(f"{kind} directory {source!r} is empty")
            paths.extend(entries)
        elif os.path.isfile(source):
            paths.append(source)
        else:
            raise ConfigError(f"{kind} path {source!r} does not exist")
    return paths


def _trace_sources(args: argparse.Namespace) -> list[str]:
    if args.traces:
        return args.traces
    env = os.environ.get(ENV_CORPUS)
    if env:
        return [env]
    raise ConfigError(f"no traces given and {ENV_CORPUS} is not set")


def _load_traces(sources: list[str]) -> list[NetworkTrace]:
    traces = []
    for path in _expand_paths(sources, "trace"):
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        name = os.path.splitext(os.path.basename(path))[0]
        traces.append(parse_trace(text, name=name))
    return traces


def _load_manifests(sources: list[str]) -> list[VideoManifest]:
    manifests = []
    for path in _expand_paths(sources, "manifest"):
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        name = os.path.splitext(os.path.basename(path))[0]
        manifests.append(parse_manifest(text, name=name))
    return manifests


def _require(args: argparse.Namespace, dest: str) -> None:
    if getattr(args, dest) is None:
        flag = "--" + dest.replace("_", "-")
        raise ConfigError(f"{flag} is required")


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in name)


def _birth_death(n: int, stay: float) -> tuple[tuple[float, ...], ...]:
    """Sticky nearest-neighbor chain used when no matrix is given."""
    if not 0.0 < stay < 1.0:
        raise ConfigError("stay probability must lie in (0, 1)")
    if n == 1:
        return ((1.0,),)
    rows = []
    for i in range(n):
        row = [0.0] * n
        row[i] = stay
        move = 1.0 - stay
        neighbors = [j for j in (i - 1, i + 1) if 0 <= j < n]
        for j in neighbors:
            row[j] = move / len(neighbors)
        rows.append(tuple(row))
    return tuple(rows)


def _parse_matrix(text: str) -> tuple[tuple[float, ...], ...]:
    try:
        return tuple(
            tuple(float(v) for v in row.split(",")) for row in text.split(";")
        )
    except ValueError as exc:
        raise ConfigError(f"bad transition matrix: {exc}") from None


def _cmd_gen_trace(args: argparse.Namespace) -> int:
    _require(args, "out")
    try:
        states_mbps = [float(v) for v in args.states.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad state list: {exc}") from None
    state_rates = tuple(v * BYTES_PER_SECOND_PER_MBPS for v in states_mbps)
    if args.transitions is not None:
        transitions = _parse_matrix(args.transitions)
    else:
        transitions = _birth_death(len(state_rates), args.stay)
    config = MarkovTraceConfig(
        state_rates=state_rates,
        transitions=transitions,
        dwell=args.dwell,
        noise=args.noise,
        duration=args.duration,
        seed=args.seed,
    )
    trace = generate_markov_trace(config, name=args.name)
    _write_text(args.out, serialize_trace(trace))
    if args.out != "-":
        print(f"wrote {args.out}: {trace.samples} samples, "
              f"mean {trace.mean_rate / BYTES_PER_SECOND_PER_MBPS:.3f} Mbps")
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    _require(args, "trace")
    _require(args, "manifest")
    trace = _load_traces([args.trace])[0]
    manifest = _load_manifests([args.manifest])[0]
    player = _player_from_args(args)
    qoe = _qoe_from_args(args)
    last_level = args.last_level
    last_quality = None
    if last_level is not None:
        if args.chunk < 1:
            raise ConfigError("--last-level needs --chunk >= 1")
        if not 0 <= last_level < manifest.n_levels:
            raise ConfigError(f"last level {last_level} outside the ladder")
        last_quality = manifest.qualities[args.chunk - 1][last_level]
    snapshot = PlayerSnapshot(
        virtual_time=args.offset,
        buffer=args.buffer,
        chunk_index=args.chunk,
        last_level=last_level,
        last_quality=last_quality,
        trace_position=args.offset,
    )
    solve = brute_force_solve if args.brute else instant_solve
    result = solve(snapshot, trace, manifest, args.lookahead, qoe, player)
    print(json.dumps({
        "action": result.action,
        "value": result.value,
        "plan": list(result.plan),
        "elapsed": result.elapsed,
    }))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    _require(args, "out")
    _require(args, "manifests")
    traces = tuple(_load_traces(_trace_sources(args)))
    manifests = tuple(_load_manifests(args.manifests))
    val_traces = tuple(_load_traces(args.val_traces)) if args.val_traces else ()
    config = TrainConfig(
        traces=traces,
        manifests=manifests,
        val_traces=val_traces,
        mode=args.mode.replace("-", "_"),
        batch_size=args.batch_size,
        buffer_capacity=args.buffer_capacity,
        learning_rate=args.learning_rate,
        entropy_coeff=args.entropy_coeff,
        lookahead=args.lookahead,
        max_samples=args.max_samples,
        eval_every=args.eval_every,
        workers=args.workers,
        seed=args.seed,
        early_stop=args.early_stop,
        qoe=_qoe_from_args(args),
        player=_player_from_args(args),
    )
    checkpoint_fn = None
    if args.checkpoint_dir:
        os.makedirs(args.checkpoint_dir, exist_ok=True)

        def checkpoint_fn(net, point):
            path = os.path.join(args.checkpoint_dir, f"ck-{point.samples:08d}.policy")
            save_network(net, path)

    net, curve = train(config, checkpoint_fn=checkpoint_fn)
    save_network(net, args.out)
    curve_path = args.curve if args.curve else args.out + ".curve.csv"
    _write_text(curve_path, curve_to_csv(curve))
    print(f"model: {args.out}")
    print(f"curve: {curve_path}")
    if curve:
        print(f"final validation QoE: {curve[-1].val_qoe!r}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "out")
    _require(args, "manifests")
    schemes = list(args.abr or [])
    if args.model:
        schemes.append(args.model)
    if not schemes:
        raise ConfigError("no scheme selected: pass --abr and/or --model")
    traces = _load_traces(_trace_sources(args))
    manifests = _load_manifests(args.manifests)
    player = _player_from_args(args)
    qoe = _qoe_from_args(args)
    reports = []
    for scheme in schemes:
        logs_out: dict | None = {} if args.sessions_dir else None
        reports.append(
            evaluate(
                scheme,
                traces,
                manifests,
                lookahead=args.lookahead,
                qoe=qoe,
                player=player,
                workers=args.workers,
                mpc_horizon=args.mpc_horizon,
                logs_out=logs_out,
            )
        )
        if args.sessions_dir:
            os.makedirs(args.sessions_dir, exist_ok=True)
            for (trace_name, video_name), log in sorted(logs_out.items()):
                path = os.path.join(
                    args.sessions_dir,
                    f"{_slug(scheme)}__{_slug(trace_name)}__{_slug(video_name)}.csv",
                )
                _write_text(path, session_to_csv(log))
    report = merge_reports(*reports)
    _write_text(args.out, report_to_csv(report))
    if args.out != "-":
        print(f"report: {args.out} ({len(report.rows)} rows)")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    _require(args, "report")
    _require(args, "a")
    _require(args, "b")
    with open(args.report, encoding="utf-8") as fh:
        report = report_from_csv(fh.read())
    result = compare(report, args.a, args.b)
    print(json.dumps({
        "scheme_a": result.scheme_a,
        "scheme_b": result.scheme_b,
        "mean_improvement_pct": result.mean_improvement,
        "improvements_pct": list(result.improvements),
        "cdf": [list(point) for point in result.cdf],
    }))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    _require(args, "report")
    with open(args.report, encoding="utf-8") as fh:
        report = report_from_csv(fh.read())
    if args.format == "csv":
        out = args.out if args.out else "-"
        _write_text(out, report_to_csv(report))
    else:
        prefix = args.out if args.out else os.path.splitext(args.report)[0]
        for path in render_plots(report, prefix, baseline=args.baseline):
            print(f"wrote {path}")
    return 0


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="abrlab",
        description="Trace-driven adaptive-bitrate laboratory",
    )
    subparsers = parser.add_subparsers(dest="command")
    submap: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, help_text: str) -> argparse.ArgumentParser:
        p = subparsers.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON file of flag values; explicit flags win")
        submap[name] = p
        return p

    p = sub("gen-trace", "generate a synthetic throughput trace")
    p.add_argument("--out", default=None, help="output file ('-' for stdout)")
    p.add_argument("--states", default="0.5,1.0,2.0,3.0,4.5",
                   help="comma-separated state means, Mbps")
    p.add_argument("--transitions", default=None,
                   help="semicolon-separated rows of comma-separated probabilities")
    p.add_argument("--stay", type=float, default=0.6,
                   help="self-transition probability for the default chain")
    p.add_argument("--dwell", type=float, default=1.0, help="seconds per state sample")
    p.add_argument("--noise", type=float, default=0.0,
                   help="multiplicative uniform noise half-width in [0, 1)")
    p.add_argument("--duration", type=float, default=320.0, help="trace length, seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None, help="trace name (default markov-SEED)")
    p.set_defaults(func=_cmd_gen_trace)

    p = sub("solve", "run the lookahead solver on one player state")
    p.add_argument("--trace", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--lookahead", type=int, default=8)
    p.add_argument("--chunk", type=int, default=0, help="imminent chunk index")
    p.add_argument("--buffer", type=float, default=0.0, help="buffer level, seconds")
    p.add_argument("--offset", type=float, default=0.0, help="position in the trace, seconds")
    p.add_argument("--last-level", type=int, default=None,
                   help="previously played level (for the smoothness term)")
    p.add_argument("--brute", action="store_true", help="plain enumeration, no pruning")
    _add_qoe_flags(p)
    _add_player_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub("train", "imitation-train a policy against the lookahead expert")
    p.add_argument("--traces", nargs="*", default=None,
                   help=f"trace files or directories (default ${ENV_CORPUS})")
    p.add_argument("--manifests", nargs="*", default=None, help="manifest files or directories")
    p.add_argument("--val-traces", nargs="*", default=None,
                   help="held-out traces (default: split from --traces)")
    p.add_argument("--out", default=None, help="model output path (.policy)")
    p.add_argument("--curve", default=None,
                   help="learning-curve CSV path (default OUT.curve.csv)")
    p.add_argument("--checkpoint-dir", default=None,
                   help="write a model checkpoint at every evaluation")
    p.add_argument("--mode", choices=["imitation", "behavioral-cloning", "behavioral_cloning"],
                   default="imitation")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--buffer-capacity", type=int, default=100_000)
    p.add_argument("--learning-rate", "--lr", type=float, default=1e-4, dest="learning_rate")
    p.add_argument("--entropy-coeff", type=float, default=0.001)
    p.add_argument("--lookahead", type=int, default=8)
    p.add_argument("--max-samples", type=int, default=10_000)
    p.add_argument("--eval-every", type=int, default=1_000)
    p.add_argument("--workers", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--early-stop", action="store_true",
                   help="stop once validation QoE plateaus")
    _add_qoe_flags(p)
    _add_player_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub("eval", "evaluate schemes over a (trace, manifest) grid")
    p.add_argument("--abr", action="append", default=None,
                   help="scheme name (rb, bola, robustmpc, expert, offline) or a "
                        "model file path; repeatable")
    p.add_argument("--model", default=None, help="model file to evaluate (shorthand)")
    p.add_argument("--traces", nargs="*", default=None,
                   help=f"trace files or directories (default ${ENV_CORPUS})")
    p.add_argument("--manifests", nargs="*", default=None, help="manifest files or directories")
    p.add_argument("--out", default=None, help="report CSV path ('-' for stdout)")
    p.add_argument("--sessions-dir", default=None,
                   help="also write each session's per-chunk CSV here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--lookahead", type=int, default=8)
    p.add_argument("--mpc-horizon", type=int, default=5)
    _add_qoe_flags(p)
    _add_player_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub("compare", "improvement distribution of one scheme over another")
    p.add_argument("--report", default=None, help="report CSV from eval")
    p.add_argument("--a", default=None, help="scheme whose improvement is measured")
    p.add_argument("--b", default=None, help="baseline scheme")
    p.set_defaults(func=_cmd_compare)

    p = sub("report", "re-emit a report as CSV or plot files")
    p.add_argument("--report", default=None, help="report CSV from eval")
    p.add_argument("--format", choices=["csv", "plots"], default="csv")
    p.add_argument("--out", default=None,
                   help="output path (csv) or path prefix (plots)")
    p.add_argument("--baseline", default=None, help="CDF comparison baseline scheme")
    p.set_defaults(func=_cmd_report)

    return parser, submap


def _apply_config_file(argv: list[str], submap: dict[str, argparse.ArgumentParser]) -> None:
    """Load --config JSON into the subcommand's defaults (flags still win)."""
    command = next((token for token in argv if not token.startswith("-")), None)
    if command not in submap:
        return
    path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
    if path is None:
        return
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    sub = submap[command]
    dests = {action.dest for action in sub._actions}
    normalized = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("config", "func", "help"):
            raise ConfigError(f"unknown config key {key!r} for {command}")
        normalized[dest] = value
    sub.set_defaults(**normalized)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, submap = _build_parser()
        _apply_config_file(argv, submap)
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help()
            return 2
        return args.func(args)
    except AbrLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
