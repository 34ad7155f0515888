"""Trace-driven adaptive-bitrate laboratory.

A deterministic virtual player replays chunked video downloads over
recorded or synthetic throughput traces; an exact lookahead solver
supplies expert decisions; classic buffer- and rate-based controllers
provide baselines; and a small from-scratch policy network learns to
match the expert by imitation.  Everything is reproducible from seeds.
"""
from .baselines import (
    DEFAULT_BOLA,
    BolaParams,
    RobustMpc,
    bola_decide,
    harmonic_mean,
    rb_decide,
)
from .errors import AbrLabError, ConfigError, DataError, InternalError
from .harness import (
    Comparison,
    EvalReport,
    EvalRow,
    compare,
    evaluate,
    merge_reports,
    render_plots,
    report_from_csv,
    report_to_csv,
    session_metrics,
)
from .media import (
    BYTES_PER_SECOND_PER_MBPS,
    MarkovTraceConfig,
    NetworkTrace,
    QualityInversionWarning,
    VideoManifest,
    generate_markov_trace,
    parse_manifest,
    parse_trace,
    serialize_manifest,
    serialize_trace,
)
from .player import (
    DEFAULT_PLAYER,
    ChunkOutcome,
    Observation,
    PlayerConfig,
    PlayerSnapshot,
    SessionContext,
    SessionLog,
    build_observation,
    download_chunk,
    initial_snapshot,
    run_session,
    session_from_csv,
    session_to_csv,
    step,
)
from .policy import (
    NetConfig,
    PolicyNetwork,
    forward,
    gradient_check,
    init_network,
    load_network,
    loss,
    policy_entropy,
    save_network,
    update,
)
from .qoe import DEFAULT_QOE, QoeParams, chunk_qoe, session_qoe
from .solver import (
    SolveResult,
    brute_force_solve,
    instant_solve,
    offline_optimal,
)
from .trainer import (
    CurvePoint,
    ExpertSample,
    ReplayBuffer,
    TrainConfig,
    curve_to_csv,
    greedy_decider,
    train,
    train_parallel,
)

__version__ = "0.1.0"

__all__ = [
    "AbrLabError",
    "BolaParams",
    "BYTES_PER_SECOND_PER_MBPS",
    "ChunkOutcome",
    "Comparison",
    "ConfigError",
    "CurvePoint",
    "DataError",
    "DEFAULT_BOLA",
    "DEFAULT_PLAYER",
    "DEFAULT_QOE",
    "EvalReport",
    "EvalRow",
    "ExpertSample",
    "InternalError",
    "MarkovTraceConfig",
    "NetConfig",
    "NetworkTrace",
    "Observation",
    "PlayerConfig",
    "PlayerSnapshot",
    "PolicyNetwork",
    "QoeParams",
    "QualityInversionWarning",
    "ReplayBuffer",
    "RobustMpc",
    "SessionContext",
    "SessionLog",
    "SolveResult",
    "TrainConfig",
    "VideoManifest",
    "bola_decide",
    "brute_force_solve",
    "build_observation",
    "chunk_qoe",
    "compare",
    "curve_to_csv",
    "download_chunk",
    "evaluate",
    "forward",
    "generate_markov_trace",
    "gradient_check",
    "greedy_decider",
    "harmonic_mean",
    "init_network",
    "initial_snapshot",
    "instant_solve",
    "load_network",
    "loss",
    "merge_reports",
    "offline_optimal",
    "parse_manifest",
    "parse_trace",
    "policy_entropy",
    "rb_decide",
    "render_plots",
    "report_from_csv",
    "report_to_csv",
    "run_session",
    "save_network",
    "serialize_manifest",
    "serialize_trace",
    "session_from_csv",
    "session_metrics",
    "session_qoe",
    "session_to_csv",
    "step",
    "train",
    "train_parallel",
    "update",
]
