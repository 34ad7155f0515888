"""Planners: exact lookahead search and the offline full-session optimum.

``instant_solve`` maximizes the summed chunk score over every level
sequence of the next N chunks, simulated against the true future trace
with the exact player arithmetic.  It is a depth-first search over the
level tree with an admissible upper-bound prune and a greedy incumbent,
and returns exactly what plain enumeration returns, ties included.
Ties break toward the lexicographically smallest plan (hence the lowest
first level).

Note on state caching: plans were also tried with memoization keyed on
(depth, level, exact virtual time), but reachable states are continuous
in time and buffer, so exact-key hits essentially never occur; the
bound prune carries all the speedup and keeps exactness trivial.

``offline_optimal`` plans the whole session.  Small instances (at most
``EXHAUSTIVE_PLAN_LIMIT`` level sequences) are enumerated outright, so
the answer there is exact by construction.  Larger ones run a dynamic
program keyed by (chunk, previous level) whose value fronts keep the
states not dominated in (time, buffer, score).  That pruning treats an
earlier arrival as never worse, which a sharply time-varying trace can
defeat: sitting out a deep bandwidth valley on a long cheap first
download is sometimes the best move, and the pruned state only looks
worse.  To bound that error the planner also rolls the lookahead expert
through the session and returns whichever plan replays better, so the
result never falls below the expert while the front search usually
clears it.  The reported score always comes from an exact replay.
"""
from __future__ import annotations

import math
import time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .media import NetworkTrace, VideoManifest
from .player import (
    DEFAULT_PLAYER,
    PlayerConfig,
    PlayerSnapshot,
    SessionLog,
    _advance,
    _settle,
    _transfer_many,
    initial_snapshot,
    run_session,
    step,
)
from .qoe import DEFAULT_QOE, QoeParams, session_qoe

ENUMERATION_GUARD = 2**24
EXHAUSTIVE_PLAN_LIMIT = 10_000


@dataclass(frozen=True)
class SolveResult:
    """Best plan for the lookahead window starting at the solved chunk."""

    action: int
    value: float
    plan: tuple[int, ...]
    elapsed: float


def _plan_search(
    trace: NetworkTrace,
    manifest: VideoManifest,
    config: PlayerConfig,
    params: QoeParams,
    snapshot: PlayerSnapshot,
    n_eff: int,
    prune: bool,
) -> tuple[float, tuple[int, ...]]:
    """Exact max over level^n_eff plans from ``snapshot``.

    With ``prune`` a branch is cut only when its admissible upper bound
    falls strictly below the incumbent, and an equal-value plan replaces
    the incumbent only when lexicographically smaller, so the result is
    independent of exploration order and identical to enumeration.
    """
    schedule = trace.schedule
    loop = config.trace_loop
    rtt = config.rtt
    chunk_len = manifest.chunk_duration
    buffer_max = config.buffer_max
    startup_excluded = config.startup_excluded
    w_q = params.quality_weight
    w_r = params.rebuffer_weight
    w_up = params.smooth_up_weight
    w_down = params.smooth_down_weight

    k0 = snapshot.chunk_index
    n_levels = manifest.n_levels
    levels = tuple(range(n_levels))
    sizes = [manifest.sizes[k0 + d] for d in range(n_eff)]
    quals = [manifest.qualities[k0 + d] for d in range(n_eff)]

    # Admissible tail bound: best achievable quality term per remaining
    # chunk, plus the net smoothness a suffix can ever collect.  With the
    # usual weights (down switches at least as costly as up) that net is
    # capped by w_up * (peak remaining quality - current quality), since
    # every later upward step must be paid back by a costlier downward
    # one.  When up switches outpay down ones, oscillating is profitable
    # and only the loose per-chunk cap w_up * max quality is admissible.
    monotone_smooth = w_down >= w_up
    suffix_quality = [0.0] * (n_eff + 1)
    suffix_peak = [0.0] * (n_eff + 1)
    suffix_slack = [0.0] * (n_eff + 1)
    for d in range(n_eff - 1, -1, -1):
        row_max = max(quals[d])
        suffix_quality[d] = suffix_quality[d + 1] + w_q * row_max
        suffix_peak[d] = max(suffix_peak[d + 1], row_max)
        suffix_slack[d] = suffix_slack[d + 1] + w_up * row_max

    best_value = -math.inf
    best_plan: tuple[int, ...] | None = None
    plan = [0] * n_eff

    def descend(d: int, tpos: float, buf: float, prev_q: float | None, acc: float) -> None:
        nonlocal best_value, best_plan
        row_quals = quals[d]
        first_chunk = k0 + d == 0 and startup_excluded
        transfers = _transfer_many(schedule, loop, tpos + rtt, sizes[d])
        if d + 1 == n_eff:
            for level in levels:
                quality = row_quals[level]
                deficit = rtt + transfers[level] - buf
                score = w_q * quality
                if deficit > 0.0 and not first_chunk:
                    score -= w_r * deficit
                if prev_q is not None:
                    diff = quality - prev_q
                    score += w_up * diff if diff >= 0.0 else w_down * diff
                acc2 = acc + score
                if acc2 > best_value:
                    plan[d] = level
                    best_value = acc2
                    best_plan = tuple(plan)
                elif acc2 == best_value and best_plan is not None:
                    plan[d] = level
                    if tuple(plan) < best_plan:
                        best_plan = tuple(plan)
            return
        tail = suffix_quality[d + 1]
        peak = suffix_peak[d + 1]
        slack = suffix_slack[d + 1]
        children = []
        for level in levels:
            quality = row_quals[level]
            download_time = rtt + transfers[level]
            # _settle inlined, op for op, so plan values replay exactly
            stall = download_time - buf
            if stall < 0.0:
                stall = 0.0
            drained = buf - download_time
            if drained < 0.0:
                drained = 0.0
            filled = drained + chunk_len
            idle = filled - buffer_max
            if idle < 0.0:
                idle = 0.0
            next_buf = filled - idle
            elapsed = download_time + stall + idle
            score = w_q * quality
            if stall != 0.0 and not first_chunk:
                score -= w_r * stall
            if prev_q is not None:
                diff = quality - prev_q
                score += w_up * diff if diff >= 0.0 else w_down * diff
            acc2 = acc + score
            if monotone_smooth:
                climb = peak - quality
                bound = acc2 + tail + (w_up * climb if climb > 0.0 else 0.0)
            else:
                bound = acc2 + tail + slack
            children.append((-bound, level, acc2, next_buf, elapsed, quality))
        if prune:
            # Most promising child first tightens the incumbent early;
            # sorted bounds let one failure cut the remaining siblings.
            children.sort()
            for neg_bound, level, acc2, next_buf, elapsed, quality in children:
                if -neg_bound < best_value:
                    break
                plan[d] = level
                descend(d + 1, tpos + elapsed, next_buf, quality, acc2)
        else:
            for _neg_bound, level, acc2, next_buf, elapsed, quality in children:
                plan[d] = level
                descend(d + 1, tpos + elapsed, next_buf, quality, acc2)

    if prune:
        # Greedy incumbent: per-depth best single-step score. Any feasible
        # plan is admissible as a seed because pruning is strict.
        tpos, buf, prev_q, acc = (
            snapshot.trace_position,
            snapshot.buffer,
            snapshot.last_quality,
            0.0,
        )
        greedy: list[int] = []
        for d in range(n_eff):
            j = k0 + d
            first_chunk = j == 0 and startup_excluded
            transfers = _transfer_many(schedule, loop, tpos + rtt, sizes[d])
            best_step = None
            for level in levels:
                quality = quals[d][level]
                download_time = rtt + transfers[level]
                stall, _idle, nb, elapsed = _settle(buf, download_time, chunk_len, buffer_max)
                rebuffer = 0.0 if first_chunk else stall
                score = w_q * quality - w_r * rebuffer
                if prev_q is not None:
                    diff = quality - prev_q
                    if diff >= 0.0:
                        score += w_up * diff
                    else:
                        score -= w_down * (prev_q - quality)
                if best_step is None or score > best_step[0]:
                    best_step = (score, level, elapsed, nb, quality)
            assert best_step is not None
            score, level, elapsed, nb, quality = best_step
            greedy.append(level)
            acc += score
            tpos += elapsed
            buf = nb
            prev_q = quality
        best_value = acc
        best_plan = tuple(greedy)

    descend(
        0,
        snapshot.trace_position,
        snapshot.buffer,
        snapshot.last_quality,
        0.0,
    )
    assert best_plan is not None
    return best_value, best_plan


def _check_solve_inputs(
    snapshot: PlayerSnapshot, manifest: VideoManifest, n: int, config: PlayerConfig
) -> int:
    if n < 1:
        raise ConfigError("lookahead must be at least 1")
    if snapshot.chunk_index < 0 or snapshot.chunk_index >= manifest.n_chunks:
        raise DataError("snapshot is past the end of the video")
    if manifest.chunk_duration > config.buffer_max:
        raise ConfigError("chunk duration exceeds buffer capacity")
    return min(n, manifest.n_chunks - snapshot.chunk_index)


def instant_solve(
    snapshot: PlayerSnapshot,
    trace: NetworkTrace,
    manifest: VideoManifest,
    n: int = 8,
    params: QoeParams = DEFAULT_QOE,
    config: PlayerConfig = DEFAULT_PLAYER,
) -> SolveResult:
    """Exact N-step lookahead against the true future trace.

    The horizon truncates at the end of the video.  The first lookahead
    chunk's smoothness term uses the snapshot's last played quality.
    """
    n_eff = _check_solve_inputs(snapshot, manifest, n, config)
    start = time.perf_counter()
    value, plan = _plan_search(trace, manifest, config, params, snapshot, n_eff, prune=True)
    elapsed = time.perf_counter() - start
    return SolveResult(action=plan[0], value=value, plan=plan, elapsed=elapsed)


def brute_force_solve(
    snapshot: PlayerSnapshot,
    trace: NetworkTrace,
    manifest: VideoManifest,
    n: int = 8,
    params: QoeParams = DEFAULT_QOE,
    config: PlayerConfig = DEFAULT_PLAYER,
) -> SolveResult:
    """Plain enumeration over all level^N plans; the solver's oracle."""
    if n >= 1 and manifest.n_levels**n > ENUMERATION_GUARD:
        raise ConfigError(
            f"enumeration too large: {manifest.n_levels}^{n} plans exceeds {ENUMERATION_GUARD}"
        )
    n_eff = _check_solve_inputs(snapshot, manifest, n, config)
    start = time.perf_counter()
    value, plan = _plan_search(trace, manifest, config, params, snapshot, n_eff, prune=False)
    elapsed = time.perf_counter() - start
    return SolveResult(action=plan[0], value=value, plan=plan, elapsed=elapsed)


def _pareto_front(
    states: list[tuple[float, float, float, tuple[int, ...]]],
) -> list[tuple[float, float, float, tuple[int, ...]]]:
    """Keep states not dominated in (time<=, buffer>=, score>=).

    Full ties collapse to the lexicographically smallest plan.  One sweep
    in time order with a buffer/score staircase: a candidate is dominated
    exactly when some earlier-or-equal-time state has both buffer and
    score at least as large.
    """
    states.sort(key=lambda s: (s[0], -s[1], -s[2], s[3]))
    kept: list[tuple[float, float, float, tuple[int, ...]]] = []
    neg_b: list[float] = []  # ascending -buffer over the staircase
    stair_q: list[float] = []  # best score at each buffer tier, increasing
    for state in states:
        _t, buf, acc, _plan = state
        count = bisect_right(neg_b, -buf)
        if count and stair_q[count - 1] >= acc:
            continue
        kept.append(state)
        j0 = bisect_left(neg_b, -buf)
        j1 = max(j0, bisect_right(stair_q, acc))
        del neg_b[j0:j1]
        del stair_q[j0:j1]
        neg_b.insert(j0, -buf)
        stair_q.insert(j0, acc)
    return kept


def offline_optimal(
    trace: NetworkTrace,
    manifest: VideoManifest,
    config: PlayerConfig = DEFAULT_PLAYER,
    params: QoeParams = DEFAULT_QOE,
) -> tuple[SessionLog, float]:
    """Best full-session plan with hindsight over the whole trace.

    Exhaustive over every level sequence when there are few enough to
    enumerate; otherwise a dynamic program keyed by (chunk, previous
    level) whose fronts drop states dominated in (time, buffer, score),
    floored by a lookahead-expert rollout (see the module docstring for
    why the pruning alone can misjudge a valley-shaped trace).  The
    winning plan is replayed through the exact player and scored from
    that replay.
    """
    if manifest.chunk_duration > config.buffer_max:
        raise ConfigError("chunk duration exceeds buffer capacity")
    schedule = trace.schedule
    loop = config.trace_loop
    rtt = config.rtt
    chunk_len = manifest.chunk_duration
    buffer_max = config.buffer_max
    w_q = params.quality_weight
    w_r = params.rebuffer_weight
    w_up = params.smooth_up_weight
    w_down = params.smooth_down_weight
    n_chunks = manifest.n_chunks
    n_levels = manifest.n_levels
    exhaustive = n_levels**n_chunks <= EXHAUSTIVE_PLAN_LIMIT

    # state: (trace_position, buffer, score, plan), keyed by previous level
    fronts: dict[int | None, list[tuple[float, float, float, tuple[int, ...]]]]
    fronts = {None: [(0.0, 0.0, 0.0, ())]}

    for k in range(n_chunks):
        first_chunk = k == 0 and config.startup_excluded
        sizes_k = manifest.sizes[k]
        quals_k = manifest.qualities[k]
        expanded: dict[int, list] = {level: [] for level in range(n_levels)}
        for prev_level, states in fronts.items():
            prev_q = None if prev_level is None else manifest.qualities[k - 1][prev_level]
            for tpos, buf, acc, plan in states:
                transfers = _transfer_many(schedule, loop, tpos + rtt, sizes_k)
                for level in range(n_levels):
                    quality = quals_k[level]
                    download_time = rtt + transfers[level]
                    stall, _idle, next_buf, elapsed = _settle(
                        buf, download_time, chunk_len, buffer_max
                    )
                    rebuffer = 0.0 if first_chunk else stall
                    score = w_q * quality - w_r * rebuffer
                    if prev_q is not None:
                        diff = quality - prev_q
                        if diff >= 0.0:
                            score += w_up * diff
                        else:
                            score -= w_down * (prev_q - quality)
                    expanded[level].append(
                        (tpos + elapsed, next_buf, acc + score, plan + (level,))
                    )
        if exhaustive:
            fronts = {level: states for level, states in expanded.items() if states}
        else:
            fronts = {
                level: _pareto_front(states)
                for level, states in expanded.items()
                if states
            }

    best_plan: tuple[int, ...] | None = None
    best_score = -math.inf
    for states in fronts.values():
        for _t, _b, acc, plan in states:
            if acc > best_score or (
                acc == best_score and best_plan is not None and plan < best_plan
            ):
                best_score = acc
                best_plan = plan
    if best_plan is None:
        raise DataError("no chunks to plan")

    log, score = _replay_plan(best_plan, trace, manifest, config, params)
    if not exhaustive:
        expert_log, expert_score = _expert_rollout(trace, manifest, config, params)
        expert_plan = tuple(outcome.level for outcome in expert_log.outcomes)
        if expert_score > score or (expert_score == score and expert_plan < best_plan):
            return expert_log, expert_score
    return log, score


def _replay_plan(
    plan: tuple[int, ...],
    trace: NetworkTrace,
    manifest: VideoManifest,
    config: PlayerConfig,
    params: QoeParams,
) -> tuple[SessionLog, float]:
    snapshot = initial_snapshot(0.0)
    outcomes = []
    for level in plan:
        outcome, snapshot = step(snapshot, level, trace, manifest, config)
        outcomes.append(outcome)
    log = SessionLog(
        outcomes=tuple(outcomes),
        startup_time=outcomes[0].startup,
        trace_name=trace.name,
        manifest_name=manifest.name,
    )
    return log, session_qoe(log, params)


def _expert_rollout(
    trace: NetworkTrace,
    manifest: VideoManifest,
    config: PlayerConfig,
    params: QoeParams,
    n: int = 8,
) -> tuple[SessionLog, float]:
    def decide(observation, ctx):
        return instant_solve(ctx.snapshot, trace, manifest, n, params, config).action

    log = run_session(trace, manifest, decide, config)
    return log, session_qoe(log, params)
