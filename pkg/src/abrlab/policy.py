"""Softmax level-selection network with hand-written reverse-mode gradients.

No learning framework: layers are numpy arrays, the backward pass is
derived by hand per layer, and the optimizer is a plain Adam
implementation.  Float64 throughout so central finite differences can
certify every analytic gradient.

Architecture: three 1-D convolutions (shared hyperparameters) encode
the throughput, download-time and buffer histories; two more convolve
the future size and quality matrices over the ladder axis per future
chunk; a small dense layer encodes the two playback scalars.  The
concatenation feeds one hidden layer and the softmax head.  An optional
gated recurrent pass can replace the flattened history encodings with a
final recurrent state computed across the convolution positions.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, InternalError
from .player import Observation

LOG_FLOOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
FORMAT_VERSION = 1
_MAGIC = "abrlab-policy"


@dataclass(frozen=True)
class NetConfig:
    """Network shape; defaults match the reference observation layout."""

    levels: int = 6
    history_len: int = 8
    future_horizon: int = 7
    conv_channels: int = 128
    conv_kernel: int = 4
    hidden: int = 128
    recurrent: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.levels < 2:
            raise ConfigError("levels must be at least 2")
        if self.hidden < 1:
            raise ConfigError("hidden must be at least 1")
        if self.conv_channels < 1:
            raise ConfigError("conv_channels must be at least 1")
        if self.conv_kernel < 1:
            raise ConfigError("conv_kernel must be at least 1")
        if self.history_len < self.conv_kernel:
            raise ConfigError("history_len must cover the convolution kernel")
        if self.levels < self.conv_kernel:
            raise ConfigError("levels must cover the convolution kernel")
        if self.future_horizon < 1:
            raise ConfigError("future_horizon must be at least 1")

    @property
    def hist_positions(self) -> int:
        return self.history_len - self.conv_kernel + 1

    @property
    def ladder_positions(self) -> int:
        return self.levels - self.conv_kernel + 1

    @property
    def concat_width(self) -> int:
        history = self.hidden if self.recurrent else 3 * self.hist_positions * self.conv_channels
        futures = 2 * self.future_horizon * self.ladder_positions * self.conv_channels
        return history + futures + self.conv_channels


def _param_specs(config: NetConfig) -> list[tuple[str, tuple[int, ...], int | None]]:
    """Ordered parameter layout: (name, shape, fan_in); fan_in None = zeros."""
    c = config.conv_channels
    k = config.conv_kernel
    h = config.hidden
    specs: list[tuple[str, tuple[int, ...], int | None]] = [
        ("conv_tput_w", (c, k), k),
        ("conv_tput_b", (c,), None),
        ("conv_dtime_w", (c, k), k),
        ("conv_dtime_b", (c,), None),
        ("conv_buffer_w", (c, k), k),
        ("conv_buffer_b", (c,), None),
        ("conv_fsize_w", (c, k), k),
        ("conv_fsize_b", (c,), None),
        ("conv_fqual_w", (c, k), k),
        ("conv_fqual_b", (c,), None),
        ("scalar_w", (c, 2), 2),
        ("scalar_b", (c,), None),
    ]
    if config.recurrent:
        d = 3 * c
        specs += [
            ("gru_wz", (h, d), d),
            ("gru_uz", (h, h), h),
            ("gru_bz", (h,), None),
            ("gru_wr", (h, d), d),
            ("gru_ur", (h, h), h),
            ("gru_br", (h,), None),
            ("gru_wn", (h, d), d),
            ("gru_un", (h, h), h),
            ("gru_bn", (h,), None),
            ("gru_bhn", (h,), None),
        ]
    specs += [
        ("hidden_w", (h, config.concat_width), config.concat_width),
        ("hidden_b", (h,), None),
        ("out_w", (config.levels, h), h),
        ("out_b", (config.levels,), None),
    ]
    return specs


class PolicyNetwork:
    """Parameter container plus optimizer state; layers live in functions."""

    def __init__(
        self,
        config: NetConfig,
        params: dict[str, np.ndarray],
        adam_m: dict[str, np.ndarray],
        adam_v: dict[str, np.ndarray],
        step_count: int = 0,
    ) -> None:
        self.config = config
        self.params = params
        self.adam_m = adam_m
        self.adam_v = adam_v
        self.step_count = step_count

    def parameter_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())


def init_network(config: NetConfig = NetConfig()) -> PolicyNetwork:
    """Fresh network: fan-in-scaled uniform weights, zero biases.

    Deterministic for a given config seed.
    """
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape, fan_in in _param_specs(config):
        if fan_in is None:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    adam_m = {name: np.zeros_like(arr) for name, arr in params.items()}
    adam_v = {name: np.zeros_like(arr) for name, arr in params.items()}
    return PolicyNetwork(config, params, adam_m, adam_v, step_count=0)


def _stack_batch(config: NetConfig, observations: list[Observation]) -> dict[str, np.ndarray]:
    if not observations:
        raise DataError("empty batch")
    for obs in observations:
        if obs.throughput_history.shape != (config.history_len,):
            raise DataError("observation history length does not match the network")
        if obs.future_sizes.shape != (config.future_horizon, config.levels):
            raise DataError("observation future window does not match the network")
    return {
        "tp": np.stack([o.throughput_history for o in observations]).astype(np.float64),
        "dl": np.stack([o.download_history for o in observations]).astype(np.float64),
        "bf": np.stack([o.buffer_history for o in observations]).astype(np.float64),
        "fs": np.stack([o.future_sizes for o in observations]).astype(np.float64),
        "fq": np.stack([o.future_qualities for o in observations]).astype(np.float64),
        "sc": np.array(
            [[o.last_quality, o.remain] for o in observations], dtype=np.float64
        ),
    }


def _windows(x: np.ndarray, kernel: int, axis: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, kernel, axis=axis)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_batch(net: PolicyNetwork, batch: dict[str, np.ndarray]) -> tuple[np.ndarray, dict]:
    """Batched forward pass; the cache carries what backward needs."""
    cfg = net.config
    p = net.params
    k = cfg.conv_kernel
    cache: dict = {"batch": batch}

    def hist_conv(x: np.ndarray, stem: str) -> np.ndarray:
        win = _windows(x, k, axis=1)
        pre = np.einsum("bpk,ck->bpc", win, p[f"{stem}_w"]) + p[f"{stem}_b"]
        cache[f"{stem}_win"] = win
        cache[f"{stem}_pre"] = pre
        return np.maximum(pre, 0.0)

    def future_conv(x: np.ndarray, stem: str) -> np.ndarray:
        win = _windows(x, k, axis=2)
        pre = np.einsum("bfpk,ck->bfpc", win, p[f"{stem}_w"]) + p[f"{stem}_b"]
        cache[f"{stem}_win"] = win
        cache[f"{stem}_pre"] = pre
        return np.maximum(pre, 0.0)

    a_tp = hist_conv(batch["tp"], "conv_tput")
    a_dl = hist_conv(batch["dl"], "conv_dtime")
    a_bf = hist_conv(batch["bf"], "conv_buffer")
    a_fs = future_conv(batch["fs"], "conv_fsize")
    a_fq = future_conv(batch["fq"], "conv_fqual")

    sc_pre = batch["sc"] @ p["scalar_w"].T + p["scalar_b"]
    cache["scalar_pre"] = sc_pre
    a_sc = np.maximum(sc_pre, 0.0)

    b = batch["tp"].shape[0]
    if cfg.recurrent:
        seq = np.concatenate([a_tp, a_dl, a_bf], axis=2)
        cache["gru_seq"] = seq
        h = np.zeros((b, cfg.hidden))
        steps = []
        for pos in range(cfg.hist_positions):
            x = seq[:, pos, :]
            z = _sigmoid(x @ p["gru_wz"].T + h @ p["gru_uz"].T + p["gru_bz"])
            r = _sigmoid(x @ p["gru_wr"].T + h @ p["gru_ur"].T + p["gru_br"])
            u = h @ p["gru_un"].T + p["gru_bhn"]
            n = np.tanh(x @ p["gru_wn"].T + p["gru_bn"] + r * u)
            h_new = (1.0 - z) * n + z * h
            steps.append((x, h, z, r, u, n))
            h = h_new
        cache["gru_steps"] = steps
        history_part = h
    else:
        history_part = np.concatenate(
            [a_tp.reshape(b, -1), a_dl.reshape(b, -1), a_bf.reshape(b, -1)], axis=1
        )
        cache["hist_acts"] = (a_tp, a_dl, a_bf)

    zcat = np.concatenate(
        [history_part, a_fs.reshape(b, -1), a_fq.reshape(b, -1), a_sc], axis=1
    )
    cache["zcat"] = zcat
    cache["future_acts"] = (a_fs, a_fq)

    hid_pre = zcat @ p["hidden_w"].T + p["hidden_b"]
    cache["hid_pre"] = hid_pre
    hid = np.maximum(hid_pre, 0.0)
    cache["hid"] = hid
    logits = hid @ p["out_w"].T + p["out_b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    cache["probs"] = probs
    return probs, cache


def forward(net: PolicyNetwork, observation: Observation) -> np.ndarray:
    """Level probabilities for one observation (a point on the simplex)."""
    batch = _stack_batch(net.config, [observation])
    probs, _ = _forward_batch(net, batch)
    return probs[0]


def loss(
    probs: np.ndarray,
    target: int | np.ndarray,
    entropy_coeff: float = 0.001,
) -> float:
    """Cross entropy against the target level minus scaled policy entropy.

    Accepts one distribution or a batch; batches return the mean.
    Logs are floored at 1e-12 and 0*log(0) counts as 0.
    """
    arr = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if arr.shape[0] != targets.shape[0]:
        raise DataError("probs and targets disagree on batch size")
    if np.any(targets < 0) or np.any(targets >= arr.shape[1]):
        raise DataError("target level outside the ladder")
    logs = np.log(np.maximum(arr, LOG_FLOOR))
    ce = -logs[np.arange(arr.shape[0]), targets]
    entropy = -(arr * logs).sum(axis=1)
    return float(np.mean(ce - entropy_coeff * entropy))


def policy_entropy(probs: np.ndarray) -> float:
    """Shannon entropy (nats) of one distribution, with the same log floor."""
    arr = np.asarray(probs, dtype=np.float64)
    logs = np.log(np.maximum(arr, LOG_FLOOR))
    return float(-(arr * logs).sum())


def _loss_and_grads(
    net: PolicyNetwork,
    batch: dict[str, np.ndarray],
    targets: np.ndarray,
    entropy_coeff: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and analytic parameter gradients for one batch."""
    cfg = net.config
    p = net.params
    probs, cache = _forward_batch(net, batch)
    b = probs.shape[0]

    logs = np.log(np.maximum(probs, LOG_FLOOR))
    ce = -logs[np.arange(b), targets]
    entropy = -(probs * logs).sum(axis=1)
    mean_loss = float(np.mean(ce - entropy_coeff * entropy))

    onehot = np.zeros_like(probs)
    onehot[np.arange(b), targets] = 1.0
    # d(mean CE)/dlogits = (p - onehot)/B; the entropy term contributes
    # +coeff * p * (log p + H) / B per row.
    dlogits = (probs - onehot) / b
    dlogits += entropy_coeff * probs * (logs + entropy[:, None]) / b

    grads: dict[str, np.ndarray] = {}
    hid = cache["hid"]
    grads["out_w"] = dlogits.T @ hid
    grads["out_b"] = dlogits.sum(axis=0)
    dhid = dlogits @ p["out_w"]
    dhid_pre = dhid * (cache["hid_pre"] > 0.0)
    zcat = cache["zcat"]
    grads["hidden_w"] = dhid_pre.T @ zcat
    grads["hidden_b"] = dhid_pre.sum(axis=0)
    dzcat = dhid_pre @ p["hidden_w"]

    c = cfg.conv_channels
    hist_width = cfg.hidden if cfg.recurrent else 3 * cfg.hist_positions * c
    fut_width = cfg.future_horizon * cfg.ladder_positions * c
    d_hist = dzcat[:, :hist_width]
    d_fs = dzcat[:, hist_width : hist_width + fut_width]
    d_fq = dzcat[:, hist_width + fut_width : hist_width + 2 * fut_width]
    d_sc = dzcat[:, hist_width + 2 * fut_width :]

    def future_conv_back(stem: str, dact_flat: np.ndarray) -> None:
        pre = cache[f"{stem}_pre"]
        dpre = dact_flat.reshape(pre.shape) * (pre > 0.0)
        grads[f"{stem}_w"] = np.einsum("bfpc,bfpk->ck", dpre, cache[f"{stem}_win"])
        grads[f"{stem}_b"] = dpre.sum(axis=(0, 1, 2))

    future_conv_back("conv_fsize", d_fs)
    future_conv_back("conv_fqual", d_fq)

    sc_pre = cache["scalar_pre"]
    dsc_pre = d_sc * (sc_pre > 0.0)
    grads["scalar_w"] = dsc_pre.T @ cache["batch"]["sc"]
    grads["scalar_b"] = dsc_pre.sum(axis=0)

    def hist_conv_back(stem: str, dact: np.ndarray) -> None:
        pre = cache[f"{stem}_pre"]
        dpre = dact.reshape(pre.shape) * (pre > 0.0)
        grads[f"{stem}_w"] = np.einsum("bpc,bpk->ck", dpre, cache[f"{stem}_win"])
        grads[f"{stem}_b"] = dpre.sum(axis=(0, 1))

    if cfg.recurrent:
        dh = d_hist
        steps = cache["gru_steps"]
        for name in ("gru_wz", "gru_uz", "gru_bz", "gru_wr", "gru_ur", "gru_br",
                     "gru_wn", "gru_un", "gru_bn", "gru_bhn"):
            grads[name] = np.zeros_like(p[name])
        dseq = np.zeros_like(cache["gru_seq"])
        for pos in range(cfg.hist_positions - 1, -1, -1):
            x, h_prev, z, r, u, n = steps[pos]
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            dan = dn * (1.0 - n * n)
            grads["gru_wn"] += dan.T @ x
            grads["gru_bn"] += dan.sum(axis=0)
            dr = dan * u
            du = dan * r
            grads["gru_un"] += du.T @ h_prev
            grads["gru_bhn"] += du.sum(axis=0)
            dh_prev = dh_prev + du @ p["gru_un"]
            dar = dr * r * (1.0 - r)
            grads["gru_wr"] += dar.T @ x
            grads["gru_br"] += dar.sum(axis=0)
            grads["gru_ur"] += dar.T @ h_prev
            dh_prev = dh_prev + dar @ p["gru_ur"]
            daz = dz * z * (1.0 - z)
            grads["gru_wz"] += daz.T @ x
            grads["gru_bz"] += daz.sum(axis=0)
            grads["gru_uz"] += daz.T @ h_prev
            dh_prev = dh_prev + daz @ p["gru_uz"]
            dseq[:, pos, :] = dan @ p["gru_wn"] + dar @ p["gru_wr"] + daz @ p["gru_wz"]
            dh = dh_prev
        hist_conv_back("conv_tput", dseq[:, :, :c])
        hist_conv_back("conv_dtime", dseq[:, :, c : 2 * c])
        hist_conv_back("conv_buffer", dseq[:, :, 2 * c :])
    else:
        width = cfg.hist_positions * c
        hist_conv_back("conv_tput", d_hist[:, :width])
        hist_conv_back("conv_dtime", d_hist[:, width : 2 * width])
        hist_conv_back("conv_buffer", d_hist[:, 2 * width :])

    return mean_loss, grads


def update(
    net: PolicyNetwork,
    batch: list[tuple[Observation, int]],
    learning_rate: float = 1e-4,
    entropy_coeff: float = 0.001,
) -> tuple[PolicyNetwork, float]:
    """One Adam step on a labeled batch; returns the pre-update mean loss.

    Mutates the network in place (parameters and optimizer moments);
    callers in concurrent settings must serialize updates externally.
    """
    if not batch:
        raise DataError("empty batch")
    if learning_rate < 0.0 or not math.isfinite(learning_rate):
        raise ConfigError("learning_rate must be non-negative")
    observations = [obs for obs, _action in batch]
    targets = np.array([action for _obs, action in batch], dtype=np.int64)
    if np.any(targets < 0) or np.any(targets >= net.config.levels):
        raise DataError("target level outside the ladder")
    stacked = _stack_batch(net.config, observations)
    mean_loss, grads = _loss_and_grads(net, stacked, targets, entropy_coeff)
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise InternalError("non-finite gradient")
    net.step_count += 1
    t = net.step_count
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name, grad in grads.items():
        m = net.adam_m[name]
        v = net.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        net.params[name] -= learning_rate * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
    return net, mean_loss


def gradient_check(
    net: PolicyNetwork,
    sample: tuple[Observation, int],
    n_coords: int = 200,
    epsilon: float = 1e-5,
    entropy_coeff: float = 0.001,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes at least ``n_coords`` randomly chosen parameter coordinates
    spread across every tensor.
    """
    observation, action = sample
    stacked = _stack_batch(net.config, [observation])
    targets = np.array([action], dtype=np.int64)
    _loss0, grads = _loss_and_grads(net, stacked, targets, entropy_coeff)

    names = list(net.params.keys())
    sizes = np.array([net.params[name].size for name in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    # Coverage matters more than pure uniformity: probe a couple of
    # coordinates in every tensor, then spread the rest over the flat
    # parameter space (which the large dense layer dominates).
    chosen: set[int] = set()
    for idx, name in enumerate(names):
        size = int(sizes[idx])
        per_tensor = min(2, size)
        for local in rng.choice(size, size=per_tensor, replace=False):
            chosen.add(int(offsets[idx]) + int(local))
    while len(chosen) < min(max(n_coords, len(names)), total):
        chosen.add(int(rng.integers(total)))
    flat_choices = sorted(chosen)

    def batch_loss() -> float:
        probs, _ = _forward_batch(net, stacked)
        logs = np.log(np.maximum(probs, LOG_FLOOR))
        ce = -logs[np.arange(1), targets]
        entropy = -(probs * logs).sum(axis=1)
        return float(np.mean(ce - entropy_coeff * entropy))

    worst = 0.0
    for flat_index in flat_choices:
        tensor_idx = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        name = names[tensor_idx]
        local = int(flat_index - offsets[tensor_idx])
        arr = net.params[name]
        flat = arr.reshape(-1)
        original = flat[local]
        flat[local] = original + epsilon
        loss_hi = batch_loss()
        flat[local] = original - epsilon
        loss_lo = batch_loss()
        flat[local] = original
        numeric = (loss_hi - loss_lo) / (2.0 * epsilon)
        analytic = grads[name].reshape(-1)[local]
        # The central difference resolves a unit-scale loss to roughly
        # eps_mach / epsilon (~2e-11), so coordinates far below 1e-6 in
        # both views carry only roundoff; compare those at a fixed scale.
        scale = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def save_network(net: PolicyNetwork, path: str | os.PathLike) -> None:
    """Write the model container: JSON header, then raw little-endian tensors."""
    tensors: list[tuple[str, np.ndarray]] = []
    for prefix, group in (("param", net.params), ("adam_m", net.adam_m), ("adam_v", net.adam_v)):
        for name, arr in group.items():
            tensors.append((f"{prefix}:{name}", arr))
    header = {
        "magic": _MAGIC,
        "format_version": FORMAT_VERSION,
        "step_count": net.step_count,
        "config": asdict(net.config),
        "tensors": [
            {"name": name, "shape": list(arr.shape), "dtype": "<f8"} for name, arr in tensors
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(b"\n\x00")
        for _name, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_network(path: str | os.PathLike) -> PolicyNetwork:
    """Read a model container written by save_network; bit-exact round trip."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n\x00")
    if sep < 0:
        raise DataError("not a policy model file: missing header separator")
    try:
        header = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError("not a policy model file: bad header") from None
    if header.get("magic") != _MAGIC:
        raise DataError("not a policy model file: bad magic")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {header.get('format_version')!r}")
    config = NetConfig(**header["config"])
    payload = raw[sep + 2 :]
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(int(v) for v in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError("truncated model payload")
        offset += nbytes
        arr = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        prefix, _, name = entry["name"].partition(":")
        if prefix not in groups or not name:
            raise DataError(f"unrecognized tensor {entry['name']!r}")
        groups[prefix][name] = arr
    if offset != len(payload):
        raise DataError("trailing bytes in model payload")
    expected = [name for name, _shape, _f in _param_specs(config)]
    for group in groups.values():
        if list(group.keys()) != expected:
            raise DataError("model tensors do not match the declared config")
    return PolicyNetwork(
        config,
        groups["param"],
        groups["adam_m"],
        groups["adam_v"],
        step_count=int(header["step_count"]),
    )
