"""Imitation-learning loop: rollouts, expert labels, replay, updates.

The policy (or, in behavioral-cloning mode, the expert itself) drives
the virtual player; every visited decision point is labeled by the
exact lookahead solver and pushed into a bounded FIFO replay buffer;
one gradient step runs per environment step once the buffer can fill a
batch.  Sampling from the learner's own on-policy states is what keeps
the training distribution from drifting away from the states the
deployed policy will actually visit.

Single-worker runs are deterministic for a seed.  The parallel variant
runs rollout workers on disjoint seeded streams; the replay buffer is
the sole cross-thread synchronization point, and workers refresh their
parameter snapshots from the learner at episode boundaries.  Parallel
schedules are not deterministic.
"""
from __future__ import annotations

import math
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .media import NetworkTrace, VideoManifest
from .player import (
    DEFAULT_PLAYER,
    Observation,
    PlayerConfig,
    PlayerSnapshot,
    build_observation,
    initial_snapshot,
    run_session,
    step,
)
from .policy import NetConfig, PolicyNetwork, forward, init_network, policy_entropy, update
from .qoe import DEFAULT_QOE, QoeParams, session_qoe
from .solver import instant_solve

MODES = ("imitation", "behavioral_cloning")


@dataclass(frozen=True)
class ExpertSample:
    """One labeled decision point: what the expert would have picked.

    The originating snapshot and corpus names ride along so audits can
    recompute the label from scratch."""

    observation: Observation
    action: int
    trace_name: str = ""
    manifest_name: str = ""
    snapshot: PlayerSnapshot | None = None


class ReplayBuffer:
    """Bounded FIFO sample store, safe for many producers and one consumer."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigError("capacity must be at least 1")
        self.capacity = capacity
        self._items: list[ExpertSample] = []
        self._cursor = 0
        self._total = 0
        self._lock = threading.Lock()

    def push(self, sample: ExpertSample) -> None:
        """Insert one sample, evicting the oldest once at capacity."""
        with self._lock:
            if len(self._items) < self.capacity:
                self._items.append(sample)
            else:
                self._items[self._cursor] = sample
                self._cursor = (self._cursor + 1) % self.capacity
            self._total += 1

    def sample(self, n: int, rng: np.random.Generator) -> list[ExpertSample]:
        """Uniform draw of n distinct stored samples."""
        with self._lock:
            if n < 1:
                raise ConfigError("sample size must be at least 1")
            if n > len(self._items):
                raise DataError(f"requested {n} samples but only {len(self._items)} stored")
            indices = rng.choice(len(self._items), size=n, replace=False)
            return [self._items[i] for i in indices]

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    @property
    def total_pushed(self) -> int:
        with self._lock:
            return self._total


@dataclass(frozen=True)
class CurvePoint:
    """One validation checkpoint along a training run."""

    samples: int
    wall_seconds: float
    val_qoe: float
    val_quality: float
    val_rebuffer: float
    entropy: float


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs; corpora ride along as tuples."""

    traces: tuple[NetworkTrace, ...]
    manifests: tuple[VideoManifest, ...]
    val_traces: tuple[NetworkTrace, ...] = ()
    mode: str = "imitation"
    batch_size: int = 64
    buffer_capacity: int = 100_000
    learning_rate: float = 1e-4
    entropy_coeff: float = 0.001
    lookahead: int = 8
    max_samples: int = 10_000
    eval_every: int = 1_000
    workers: int = 12
    seed: int = 0
    early_stop: bool = False
    qoe: QoeParams = DEFAULT_QOE
    player: PlayerConfig = DEFAULT_PLAYER
    net: NetConfig | None = None

    def __post_init__(self) -> None:
        if not self.traces:
            raise ConfigError("no training traces")
        if not self.manifests:
            raise ConfigError("no manifests")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must be at least batch_size")
        if self.max_samples < 1:
            raise ConfigError("max_samples must be at least 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.lookahead < 1:
            raise ConfigError("lookahead must be at least 1")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be non-negative")
        n_levels = {m.n_levels for m in self.manifests}
        if len(n_levels) != 1:
            raise ConfigError("all manifests must share one ladder size")

    def resolved_net(self) -> NetConfig:
        if self.net is not None:
            return self.net
        levels = self.manifests[0].n_levels
        default_kernel = NetConfig.__dataclass_fields__["conv_kernel"].default
        return NetConfig(
            levels=levels,
            history_len=self.player.history_len,
            future_horizon=self.player.future_horizon,
            conv_kernel=min(default_kernel, levels, self.player.history_len),
            seed=self.seed,
        )


def _split_corpora(
    config: TrainConfig,
) -> tuple[tuple[NetworkTrace, ...], tuple[NetworkTrace, ...]]:
    """Training/validation trace split.

    Explicit val_traces win; otherwise every fifth trace is held out,
    falling back to validating on the training set when the corpus is
    too small to split.
    """
    if config.val_traces:
        return config.traces, config.val_traces
    if len(config.traces) >= 5:
        val = config.traces[::5]
        train = tuple(t for i, t in enumerate(config.traces) if i % 5 != 0)
        return train, val
    return config.traces, config.traces


def greedy_decider(net: PolicyNetwork):
    """Decider that plays the argmax level of the policy."""

    def decide(observation: Observation, _ctx) -> int:
        return int(np.argmax(forward(net, observation)))

    return decide


def _validate_policy(
    net: PolicyNetwork,
    val_traces: tuple[NetworkTrace, ...],
    manifests: tuple[VideoManifest, ...],
    player: PlayerConfig,
    qoe: QoeParams,
) -> tuple[float, float, float, float]:
    """Greedy-policy means over the held-out corpus.

    Returns (qoe, quality, rebuffer seconds, decision entropy)."""
    qoes: list[float] = []
    qualities: list[float] = []
    rebuffers: list[float] = []
    entropies: list[float] = []

    def decide(observation: Observation, _ctx) -> int:
        probs = forward(net, observation)
        entropies.append(policy_entropy(probs))
        return int(np.argmax(probs))

    for trace in val_traces:
        for manifest in manifests:
            log = run_session(trace, manifest, decide, player)
            qoes.append(session_qoe(log, qoe))
            qualities.append(sum(oc.quality for oc in log.outcomes) / len(log.outcomes))
            rebuffers.append(sum(oc.rebuffer for oc in log.outcomes))
    return (
        float(np.mean(qoes)),
        float(np.mean(qualities)),
        float(np.mean(rebuffers)),
        float(np.mean(entropies)),
    )


def _should_stop_early(curve: list[CurvePoint]) -> bool:
    """True when the last three checkpoints each improved < 0.5%."""
    if len(curve) < 4:
        return False
    recent = curve[-4:]
    for before, after in zip(recent, recent[1:]):
        base = max(abs(before.val_qoe), 1e-9)
        if (after.val_qoe - before.val_qoe) / base >= 0.005:
            return False
    return True


CheckpointFn = Callable[[PolicyNetwork, CurvePoint], None]


def train(
    config: TrainConfig,
    checkpoint_fn: CheckpointFn | None = None,
) -> tuple[PolicyNetwork, list[CurvePoint]]:
    """Run imitation training; dispatches on the worker count.

    ``checkpoint_fn`` fires after every validation checkpoint with the
    current network and curve point."""
    if config.workers > 1:
        return train_parallel(config, checkpoint_fn=checkpoint_fn)
    return _train_single(config, checkpoint_fn)


def _train_single(
    config: TrainConfig,
    checkpoint_fn: CheckpointFn | None = None,
) -> tuple[PolicyNetwork, list[CurvePoint]]:
    train_traces, val_traces = _split_corpora(config)
    net = init_network(config.resolved_net())
    buffer = ReplayBuffer(config.buffer_capacity)
    episode_rng, action_rng, batch_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    curve: list[CurvePoint] = []
    samples = 0
    next_eval = config.eval_every
    started = time.perf_counter()
    stop = False

    def checkpoint() -> None:
        val_qoe, val_quality, val_rebuffer, entropy = _validate_policy(
            net, val_traces, config.manifests, config.player, config.qoe
        )
        curve.append(
            CurvePoint(
                samples=samples,
                wall_seconds=time.perf_counter() - started,
                val_qoe=val_qoe,
                val_quality=val_quality,
                val_rebuffer=val_rebuffer,
                entropy=entropy,
            )
        )
        if checkpoint_fn is not None:
            checkpoint_fn(net, curve[-1])

    while samples < config.max_samples and not stop:
        trace = train_traces[int(episode_rng.integers(len(train_traces)))]
        manifest = config.manifests[int(episode_rng.integers(len(config.manifests)))]
        offset = (
            float(episode_rng.uniform(0.0, trace.period)) if config.player.trace_loop else 0.0
        )
        snapshot = initial_snapshot(offset)
        outcomes = []
        for _ in range(manifest.n_chunks):
            if samples >= config.max_samples or stop:
                break
            observation = build_observation(outcomes, snapshot, manifest, config.player)
            solved = instant_solve(
                snapshot, trace, manifest, config.lookahead, config.qoe, config.player
            )
            buffer.push(
                ExpertSample(observation, solved.action, trace.name, manifest.name, snapshot)
            )
            samples += 1
            if config.mode == "imitation":
                probs = forward(net, observation)
                action = int(action_rng.choice(net.config.levels, p=probs))
            else:
                action = solved.action
            outcome, snapshot = step(snapshot, action, trace, manifest, config.player)
            outcomes.append(outcome)
            if len(buffer) >= config.batch_size:
                drawn = buffer.sample(config.batch_size, batch_rng)
                update(
                    net,
                    [(s.observation, s.action) for s in drawn],
                    config.learning_rate,
                    config.entropy_coeff,
                )
            if samples >= next_eval or samples >= config.max_samples:
                checkpoint()
                while next_eval <= samples:
                    next_eval += config.eval_every
                if config.early_stop and _should_stop_early(curve):
                    stop = True
    if not curve:
        checkpoint()
    return net, curve


class _ParamBoard:
    """Learner-published parameter snapshots; workers copy on refresh."""

    def __init__(self, net: PolicyNetwork) -> None:
        self._lock = threading.Lock()
        self._config = net.config
        self._params = {name: arr.copy() for name, arr in net.params.items()}
        self._step = net.step_count

    def publish(self, net: PolicyNetwork) -> None:
        snapshot = {name: arr.copy() for name, arr in net.params.items()}
        with self._lock:
            self._params = snapshot
            self._step = net.step_count

    def snapshot(self) -> PolicyNetwork:
        with self._lock:
            params = self._params
            step_count = self._step
        return PolicyNetwork(self._config, params, {}, {}, step_count=step_count)


class _SampleBudget:
    """Shared countdown so the global sample count is exact."""

    def __init__(self, limit: int) -> None:
        self._limit = limit
        self._claimed = 0
        self._lock = threading.Lock()

    def claim(self) -> bool:
        with self._lock:
            if self._claimed >= self._limit:
                return False
            self._claimed += 1
            return True

    @property
    def exhausted(self) -> bool:
        with self._lock:
            return self._claimed >= self._limit


def train_parallel(
    config: TrainConfig,
    stats_out: dict | None = None,
    checkpoint_fn: CheckpointFn | None = None,
) -> tuple[PolicyNetwork, list[CurvePoint]]:
    """Parallel rollout workers feeding one learner thread.

    Workers label and push on disjoint seeded streams and refresh
    parameter snapshots at episode boundaries; the learner paces one
    update per pushed sample once the buffer can fill a batch.  Pass a
    dict as ``stats_out`` to receive per-worker push accounting.
    """
    if config.workers < 2:
        raise ConfigError("train_parallel needs at least 2 workers")
    train_traces, val_traces = _split_corpora(config)
    net = init_network(config.resolved_net())
    buffer = ReplayBuffer(config.buffer_capacity)
    board = _ParamBoard(net)
    budget = _SampleBudget(config.max_samples)
    stop_event = threading.Event()
    errors: list[BaseException] = []
    pushed_per_worker = [0] * config.workers
    seeds = np.random.SeedSequence(config.seed).spawn(config.workers + 1)
    batch_rng = np.random.default_rng(seeds[-1])

    def worker(index: int) -> None:
        episode_rng, action_rng = (
            np.random.default_rng(s) for s in seeds[index].spawn(2)
        )
        try:
            while not stop_event.is_set() and not budget.exhausted:
                policy_view = board.snapshot()
                trace = train_traces[int(episode_rng.integers(len(train_traces)))]
                manifest = config.manifests[int(episode_rng.integers(len(config.manifests)))]
                offset = (
                    float(episode_rng.uniform(0.0, trace.period))
                    if config.player.trace_loop
                    else 0.0
                )
                snapshot = initial_snapshot(offset)
                outcomes = []
                for _ in range(manifest.n_chunks):
                    if stop_event.is_set() or not budget.claim():
                        return
                    observation = build_observation(
                        outcomes, snapshot, manifest, config.player
                    )
                    solved = instant_solve(
                        snapshot, trace, manifest, config.lookahead, config.qoe, config.player
                    )
                    buffer.push(
                        ExpertSample(
                            observation, solved.action, trace.name, manifest.name, snapshot
                        )
                    )
                    pushed_per_worker[index] += 1
                    if config.mode == "imitation":
                        probs = forward(policy_view, observation)
                        action = int(action_rng.choice(policy_view.config.levels, p=probs))
                    else:
                        action = solved.action
                    outcome, snapshot = step(
                        snapshot, action, trace, manifest, config.player
                    )
                    outcomes.append(outcome)
        except BaseException as exc:  # surfaced by the learner below
            errors.append(exc)
            stop_event.set()

    threads = [
        threading.Thread(target=worker, args=(i,), name=f"rollout-{i}", daemon=True)
        for i in range(config.workers)
    ]
    for thread in threads:
        thread.start()

    curve: list[CurvePoint] = []
    next_eval = config.eval_every
    updates_done = 0
    started = time.perf_counter()

    def checkpoint(sample_count: int) -> None:
        val_qoe, val_quality, val_rebuffer, entropy = _validate_policy(
            net, val_traces, config.manifests, config.player, config.qoe
        )
        curve.append(
            CurvePoint(
                samples=sample_count,
                wall_seconds=time.perf_counter() - started,
                val_qoe=val_qoe,
                val_quality=val_quality,
                val_rebuffer=val_rebuffer,
                entropy=entropy,
            )
        )
        if checkpoint_fn is not None:
            checkpoint_fn(net, curve[-1])

    try:
        while True:
            if errors:
                break
            total = buffer.total_pushed
            can_update = updates_done < total and len(buffer) >= config.batch_size
            if can_update:
                drawn = buffer.sample(config.batch_size, batch_rng)
                update(
                    net,
                    [(s.observation, s.action) for s in drawn],
                    config.learning_rate,
                    config.entropy_coeff,
                )
                updates_done += 1
                if updates_done % 32 == 0:
                    board.publish(net)
            if total >= next_eval:
                checkpoint(total)
                while next_eval <= total:
                    next_eval += config.eval_every
            workers_alive = any(t.is_alive() for t in threads)
            if not workers_alive and updates_done >= buffer.total_pushed:
                break
            if not workers_alive and len(buffer) < config.batch_size:
                break
            if not can_update and workers_alive:
                time.sleep(0.001)
    finally:
        stop_event.set()
        for thread in threads:
            thread.join()
    if errors:
        raise errors[0]
    board.publish(net)
    checkpoint(buffer.total_pushed)
    if stats_out is not None:
        stats_out["pushed_per_worker"] = list(pushed_per_worker)
        stats_out["total_pushed"] = buffer.total_pushed
    return net, curve


CURVE_CSV_HEADER = "samples,wall_seconds,val_qoe,val_quality,val_rebuffer,entropy"


def curve_to_csv(curve: list[CurvePoint]) -> str:
    """Render a learning curve as CSV."""
    lines = [CURVE_CSV_HEADER]
    for point in curve:
        lines.append(
            f"{point.samples},{point.wall_seconds!r},{point.val_qoe!r},"
            f"{point.val_quality!r},{point.val_rebuffer!r},{point.entropy!r}"
        )
    return "\n".join(lines) + "\n"
