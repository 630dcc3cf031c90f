"""Architecture definition, weight init, and the exact forward pass.

Layout: two 1D conv blocks (conv -> batch norm -> ReLU -> 2x max pool),
a single bidirectional LSTM over the pooled sequence, last-timestep
aggregation, dropout, and a softmax linear head. Five structural variants
toggle the pieces:

    a0  base
    a1  no max pooling (sequence length preserved)
    a2  unidirectional LSTM (forward scan only, head width H)
    a3  single conv block
    a4  mean pooling over timesteps instead of last-timestep aggregation

LSTM gate order on the 4H axis is fixed as (input i, forget f, cell g,
output o). Each direction carries two bias vectors (bias_ih, bias_hh).

Everything here is batch-first: activations are [B, T, feat]. The
single-window entry point `model_forward` wraps a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .numerics import FLOAT, Rng, ShapeError, sigmoid, softmax

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Variant(str, Enum):
    BASE = "a0"
    NO_POOL = "a1"
    UNIDIR = "a2"
    SINGLE_CONV = "a3"
    MEAN_POOL = "a4"

    @property
    def num_conv_blocks(self) -> int:
        return 1 if self is Variant.SINGLE_CONV else 2

    @property
    def pools(self) -> bool:
        return self is not Variant.NO_POOL

    @property
    def pool_factor(self) -> int:
        if self is Variant.NO_POOL:
            return 1
        return 2 if self is Variant.SINGLE_CONV else 4

    @property
    def bidirectional(self) -> bool:
        return self is not Variant.UNIDIR

    @property
    def mean_pool(self) -> bool:
        return self is Variant.MEAN_POOL


@dataclass(frozen=True)
class ModelConfig:
    channels: int
    window_len: int
    num_classes: int
    conv_filters: int = 16
    kernel: int = 5
    lstm_hidden: int = 24
    dropout_rate: float = 0.0
    variant: Variant = Variant.BASE

    def __post_init__(self):
        if self.channels < 1 or self.window_len < 1 or self.conv_filters < 1 or self.lstm_hidden < 1:
            raise ValueError("channels, window_len, conv_filters and lstm_hidden must be positive")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel must be a positive odd integer")
        if self.kernel > self.window_len:
            raise ValueError(f"kernel {self.kernel} exceeds window length {self.window_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if isinstance(self.variant, str) and not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def head_width(self) -> int:
        return (2 if self.variant.bidirectional else 1) * self.lstm_hidden

    def seq_lengths(self) -> list[int]:
        """Sequence length after each conv block (floor division per pool)."""
        t = self.window_len
        out = []
        for _ in range(self.variant.num_conv_blocks):
            if self.variant.pools:
                t = t // 2
            out.append(t)
        return out

    @property
    def lstm_seq_len(self) -> int:
        return self.seq_lengths()[-1]

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "window_len": self.window_len,
            "num_classes": self.num_classes,
            "conv_filters": self.conv_filters,
            "kernel": self.kernel,
            "lstm_hidden": self.lstm_hidden,
            "dropout_rate": self.dropout_rate,
            "variant": self.variant.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["variant"] = Variant(d.get("variant", "a0"))
        return cls(**d)


# Running statistics live in the weight container but are not trainable.
_NON_LEARNABLE_SUFFIXES = (".running_mean", ".running_var")


@dataclass
class ModelWeights:
    """Named tensor collection in one canonical order."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def learnable_names(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith(_NON_LEARNABLE_SUFFIXES)]

    def num_learnable_scalars(self) -> int:
        return sum(self.tensors[n].size for n in self.learnable_names())

    def copy(self) -> "ModelWeights":
        return ModelWeights({n: t.copy() for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights({n: t.astype(dtype) for n, t in self.tensors.items()})


def tensor_order(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) listing for a config, in serialization order."""
    c, f, k, h = config.channels, config.conv_filters, config.kernel, config.lstm_hidden
    order: list[tuple[str, tuple[int, ...]]] = [
        ("conv1.weight", (f, c, k)),
        ("conv1.bias", (f,)),
        ("bn1.gamma", (f,)),
        ("bn1.beta", (f,)),
        ("bn1.running_mean", (f,)),
        ("bn1.running_var", (f,)),
    ]
    if config.variant.num_conv_blocks == 2:
        order += [
            ("conv2.weight", (f, f, k)),
            ("conv2.bias", (f,)),
            ("bn2.gamma", (f,)),
            ("bn2.beta", (f,)),
            ("bn2.running_mean", (f,)),
            ("bn2.running_var", (f,)),
        ]
    directions = ["fwd", "bwd"] if config.variant.bidirectional else ["fwd"]
    for d in directions:
        order += [
            (f"lstm.{d}.weight_ih", (4 * h, f)),
            (f"lstm.{d}.weight_hh", (4 * h, h)),
            (f"lstm.{d}.bias_ih", (4 * h,)),
            (f"lstm.{d}.bias_hh", (4 * h,)),
        ]
    order += [
        ("head.weight", (config.num_classes, config.head_width)),
        ("head.bias", (config.num_classes,)),
    ]
    return order


def build_model(config: ModelConfig, rng: Rng) -> ModelWeights:
    """Initialize weights.

    Conv, LSTM and head weights draw from uniform(-1/sqrt(fan_in),
    +1/sqrt(fan_in)); the forget-gate slice of each bias_ih starts at 1.0,
    every other bias at 0; batch-norm starts as the identity transform.
    Tensors are drawn in canonical order, so one (config, seed) pair always
    yields bitwise-identical weights.
    """
    h = config.lstm_hidden
    w = ModelWeights()
    for name, shape in tensor_order(config):
        if name.endswith(".weight") or ".weight_" in name:
            if "weight_hh" in name:
                fan_in = h
            elif "weight_ih" in name:
                fan_in = shape[1]
            else:
                fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            w[name] = rng.uniform(-bound, bound, size=shape, dtype=FLOAT)
        elif name.endswith(".gamma") or name.endswith(".running_var"):
            w[name] = np.ones(shape, dtype=FLOAT)
        elif name.endswith("bias_ih"):
            b = np.zeros(shape, dtype=FLOAT)
            b[h : 2 * h] = 1.0
            w[name] = b
        else:
            w[name] = np.zeros(shape, dtype=FLOAT)
    return w


def _pad_time(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (pad, pad), (0, 0)))


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """[B, T, C] -> [B, T, C*K] patch matrix under same padding."""
    pad = (kernel - 1) // 2
    xp = _pad_time(x, pad)
    # windows: [B, T, C, K]; flatten (C, K) row-major to match weight layout
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)
    b, t = x.shape[0], x.shape[1]
    return np.ascontiguousarray(win).reshape(b, t, -1)


def conv1d_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Same-padded 1D convolution over time; returns (y, patch matrix)."""
    f, c_in, k = weight.shape
    if x.shape[2] != c_in:
        raise ShapeError(f"conv: input channels {x.shape[2]} != weight channels {c_in}")
    col = _im2col(x, k)
    y = col @ weight.reshape(f, -1).T + bias
    return y, col


def batchnorm_forward(x: np.ndarray, gamma, beta, running_mean, running_var, training: bool):
    """Per-feature batch norm over (batch, time).

    Training mode normalizes with batch statistics (population variance) and
    updates the running buffers in place with momentum 0.1; eval mode reads
    the running buffers and mutates nothing.
    """
    if training:
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean.astype(running_mean.dtype)
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var.astype(running_var.dtype)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mean) * inv_std
    y = gamma * x_hat + beta
    cache = {"x_hat": x_hat, "inv_std": inv_std, "training": training}
    return y, cache


def maxpool2(x: np.ndarray):
    """Non-overlapping window-2 max over time; odd trailing element dropped."""
    t = x.shape[1]
    if t < 2:
        raise ShapeError(f"maxpool2 needs at least 2 timesteps, got {t}")
    t2 = t // 2
    xr = x[:, : 2 * t2].reshape(x.shape[0], t2, 2, x.shape[2])
    idx = np.argmax(xr, axis=2)
    y = np.take_along_axis(xr, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return y, idx


def conv_block_forward(x, weight, bias, gamma, beta, running_mean, running_var,
                       training: bool, pool: bool):
    """conv -> BN -> ReLU -> optional 2x max pool, with a backward cache."""
    z, col = conv1d_same(x, weight, bias)
    bn_out, bn_cache = batchnorm_forward(z, gamma, beta, running_mean, running_var, training)
    act = np.maximum(bn_out, 0)
    cache = {"col": col, "bn": bn_cache, "relu_mask": bn_out > 0,
             "in_shape": x.shape, "pool": pool}
    if pool:
        y, pool_idx = maxpool2(act)
        cache["pool_idx"] = pool_idx
        cache["pre_pool_t"] = act.shape[1]
    else:
        y = act
    return y, cache


def lstm_cell(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              w_ih: np.ndarray, w_hh: np.ndarray, b_ih: np.ndarray, b_hh: np.ndarray):
    """One recurrence step; returns (h_t, c_t, gate cache)."""
    hdim = w_hh.shape[1]
    z = x_t @ w_ih.T + h_prev @ w_hh.T + b_ih + b_hh
    i = sigmoid(z[..., :hdim])
    f = sigmoid(z[..., hdim : 2 * hdim])
    g = np.tanh(z[..., 2 * hdim : 3 * hdim])
    o = sigmoid(z[..., 3 * hdim :])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    return h_t, c_t, {"i": i, "f": f, "g": g, "o": o, "tanh_c": tc}


def _lstm_scan(x_seq: np.ndarray, w_ih, w_hh, b_ih, b_hh, reverse: bool):
    """Scan a direction over [B, T, Fin]; hidden states indexed by position."""
    b, t, _ = x_seq.shape
    hdim = w_hh.shape[1]
    dt = x_seq.dtype
    hs = np.zeros((t, b, hdim), dtype=dt)
    cs = np.zeros((t, b, hdim), dtype=dt)
    gates = {k: np.zeros((t, b, hdim), dtype=dt) for k in ("i", "f", "g", "o", "tanh_c")}
    h = np.zeros((b, hdim), dtype=dt)
    c = np.zeros((b, hdim), dtype=dt)
    order = range(t - 1, -1, -1) if reverse else range(t)
    for step in order:
        h, c, gc = lstm_cell(x_seq[:, step], h, c, w_ih, w_hh, b_ih, b_hh)
        hs[step] = h
        cs[step] = c
        for k in gates:
            gates[k][step] = gc[k]
    return hs, {"hs": hs, "cs": cs, "gates": gates, "reverse": reverse}


def bilstm_forward(x_seq: np.ndarray, weights: ModelWeights, bidirectional: bool):
    """Full recurrent layer; output row t is concat(h_fwd[t], h_bwd[t])."""
    caches = {}
    hs_f, caches["fwd"] = _lstm_scan(
        x_seq, weights["lstm.fwd.weight_ih"], weights["lstm.fwd.weight_hh"],
        weights["lstm.fwd.bias_ih"], weights["lstm.fwd.bias_hh"], reverse=False)
    parts = [hs_f]
    if bidirectional:
        hs_b, caches["bwd"] = _lstm_scan(
            x_seq, weights["lstm.bwd.weight_ih"], weights["lstm.bwd.weight_hh"],
            weights["lstm.bwd.bias_ih"], weights["lstm.bwd.bias_hh"], reverse=True)
        parts.append(hs_b)
    out = np.concatenate(parts, axis=2).transpose(1, 0, 2)  # [B, T, D]
    caches["x_seq"] = x_seq
    return out, caches


def aggregate(h_seq: np.ndarray, variant: Variant) -> np.ndarray:
    """Collapse [B, T, D] to [B, D]: last row, or per-column mean for a4."""
    if h_seq.shape[1] < 1:
        raise ShapeError("aggregate: empty sequence")
    if variant.mean_pool:
        return h_seq.mean(axis=1)
    return h_seq[:, -1, :]


def forward_batch(config: ModelConfig, weights: ModelWeights, x: np.ndarray,
                  training: bool = False, rng: Rng | None = None):
    """Forward pass over a batch [B, T, C].

    Returns (probabilities [B, num_classes], cache). The cache is None in
    eval mode; in training mode it holds every intermediate needed by
    `training.backward`. Dropout is active only in training mode and draws
    its mask from `rng` (inverted scaling by 1/(1-p)).
    """
    if x.ndim != 3 or x.shape[1] != config.window_len or x.shape[2] != config.channels:
        raise ShapeError(
            f"input: expected [B, {config.window_len}, {config.channels}], got {x.shape}")
    if np.isnan(x).any():
        raise ValueError("NaN in input window")

    cache: dict = {"blocks": []} if training else None
    h = x
    for blk in range(1, config.variant.num_conv_blocks + 1):
        h, blk_cache = conv_block_forward(
            h, weights[f"conv{blk}.weight"], weights[f"conv{blk}.bias"],
            weights[f"bn{blk}.gamma"], weights[f"bn{blk}.beta"],
            weights[f"bn{blk}.running_mean"], weights[f"bn{blk}.running_var"],
            training=training, pool=config.variant.pools)
        if training:
            cache["blocks"].append(blk_cache)

    h_seq, lstm_cache = bilstm_forward(h, weights, config.variant.bidirectional)
    h_agg = aggregate(h_seq, config.variant)

    p = config.dropout_rate
    if training and p > 0.0:
        if rng is None:
            raise ValueError("training-mode forward with dropout requires an rng")
        mask = (rng.random(size=h_agg.shape) >= p).astype(h_agg.dtype) / (1.0 - p)
        h_drop = h_agg * mask
    else:
        mask = None
        h_drop = h_agg

    logits = h_drop @ weights["head.weight"].T + weights["head.bias"]
    probs = softmax(logits)

    if training:
        cache.update({
            "lstm": lstm_cache, "h_seq_t": h_seq.shape[1], "h_agg": h_agg,
            "dropout_mask": mask, "h_drop": h_drop, "probs": probs,
        })
    return probs, cache


def model_forward(config: ModelConfig, weights: ModelWeights, window: np.ndarray,
                  training: bool = False, rng: Rng | None = None):
    """Single-window forward: [T, C] in, class probabilities out."""
    if window.ndim != 2:
        raise ShapeError(f"window: expected rank 2 [T, C], got shape {window.shape}")
    probs, cache = forward_batch(config, weights, window[None], training=training, rng=rng)
    return (probs[0], cache) if training else (probs[0], None)


def predict_batch(config: ModelConfig, weights: ModelWeights, x: np.ndarray,
                  batch_size: int = 256) -> np.ndarray:
    """Eval-mode argmax labels for a window stack [N, T, C]."""
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], batch_size):
        probs, _ = forward_batch(config, weights, x[start : start + batch_size])
        out[start : start + batch_size] = np.argmax(probs, axis=1)
    return out


def config_with(config: ModelConfig, **kwargs) -> ModelConfig:
    return replace(config, **kwargs)
