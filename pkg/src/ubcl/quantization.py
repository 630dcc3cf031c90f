"""INT8 post-training quantization with calibration and simulated inference.

Scheme: per-tensor symmetric weights (scale = max|w| / 127, zero point 0),
per-tensor affine activations over calibrated [min, max] ranges that are
widened to include 0 so that zero padding and zeroed channels map exactly.
Batch norm folds into the preceding convolution before any quantization.

Simulated inference keeps every matmul in int32 accumulators fed by int8
operands and requantizes activations at the recorded layer boundaries:
input, each conv block output, and the recurrent hidden state. Sigmoid,
tanh and softmax run in float on dequantized values; biases stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BN_EPS, ModelConfig, ModelWeights, maxpool2
from .numerics import rng_derive, softmax

SCALE_FLOOR = 1e-8
CALIBRATION_STREAM = 10_000  # rng child stream reserved for calibration picks
DEFAULT_CALIBRATION_SAMPLES = 256


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    scheme: str  # "symmetric-weight" | "affine-activation"

    def quantize(self, x: np.ndarray) -> np.ndarray:
        q = np.round(x / self.scale) + self.zero_point
        lo = -127 if self.scheme == "symmetric-weight" else -128
        return np.clip(q, lo, 127).astype(np.int8)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return ((q.astype(np.float32) - self.zero_point) * self.scale).astype(np.float32)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zeroPoint": self.zero_point, "scheme": self.scheme}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(d["scale"], d["zeroPoint"], d["scheme"])


def symmetric_params(x: np.ndarray) -> QuantParams:
    scale = max(float(np.max(np.abs(x))) / 127.0, SCALE_FLOOR)
    return QuantParams(scale, 0, "symmetric-weight")


def affine_params(lo: float, hi: float) -> QuantParams:
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = max((hi - lo) / 255.0, SCALE_FLOOR)
    zp = int(np.clip(round(-128 - lo / scale), -128, 127))
    return QuantParams(scale, zp, "affine-activation")


@dataclass
class QuantizedModel:
    config: ModelConfig
    weight_q: dict[str, np.ndarray]
    weight_params: dict[str, QuantParams]
    biases: dict[str, np.ndarray]
    act_params: dict[str, QuantParams]


def fold_batchnorm(config: ModelConfig, weights: ModelWeights) -> dict[str, np.ndarray]:
    """Absorb eval-mode batch norm into the preceding conv weights/biases."""
    folded: dict[str, np.ndarray] = {}
    for blk in range(1, config.variant.num_conv_blocks + 1):
        inv_std = 1.0 / np.sqrt(weights[f"bn{blk}.running_var"] + BN_EPS)
        g = weights[f"bn{blk}.gamma"] * inv_std
        folded[f"conv{blk}.weight"] = weights[f"conv{blk}.weight"] * g[:, None, None]
        folded[f"conv{blk}.bias"] = ((weights[f"conv{blk}.bias"]
                                      - weights[f"bn{blk}.running_mean"]) * g
                                     + weights[f"bn{blk}.beta"]).astype(np.float32)
    directions = ["fwd", "bwd"] if config.variant.bidirectional else ["fwd"]
    for d in directions:
        for part in ("weight_ih", "weight_hh", "bias_ih", "bias_hh"):
            folded[f"lstm.{d}.{part}"] = weights[f"lstm.{d}.{part}"].copy()
    folded["head.weight"] = weights["head.weight"].copy()
    folded["head.bias"] = weights["head.bias"].copy()
    return folded


def folded_forward_batch(config: ModelConfig, folded: dict[str, np.ndarray], x: np.ndarray):
    """Float forward through the folded graph (BN absorbed), for fold checks."""
    h = x
    for blk in range(1, config.variant.num_conv_blocks + 1):
        h = _conv_float(h, folded[f"conv{blk}.weight"], folded[f"conv{blk}.bias"])
        h = np.maximum(h, 0)
        if config.variant.pools:
            h, _ = maxpool2(h)
    h_seq = _float_bilstm(config, folded, h)
    h_agg = h_seq.mean(axis=1) if config.variant.mean_pool else h_seq[:, -1, :]
    return softmax(h_agg @ folded["head.weight"].T + folded["head.bias"])


def _conv_float(x, weight, bias):
    from .model import conv1d_same
    y, _ = conv1d_same(x, weight, bias)
    return y


def _float_bilstm(config, folded, x_seq):
    from .model import _lstm_scan
    parts = [_lstm_scan(x_seq, folded["lstm.fwd.weight_ih"], folded["lstm.fwd.weight_hh"],
                        folded["lstm.fwd.bias_ih"], folded["lstm.fwd.bias_hh"], False)[0]]
    if config.variant.bidirectional:
        parts.append(_lstm_scan(x_seq, folded["lstm.bwd.weight_ih"], folded["lstm.bwd.weight_hh"],
                                folded["lstm.bwd.bias_ih"], folded["lstm.bwd.bias_hh"], True)[0])
    return np.concatenate(parts, axis=2).transpose(1, 0, 2)


def boundary_names(config: ModelConfig) -> list[str]:
    names = ["input"] + [f"conv{b}" for b in range(1, config.variant.num_conv_blocks + 1)]
    return names + ["lstm_h"]


def _trace_boundaries(config: ModelConfig, weights: ModelWeights, x: np.ndarray) -> dict:
    from .model import bilstm_forward, conv_block_forward
    seen = {"input": x}
    h = x
    for blk in range(1, config.variant.num_conv_blocks + 1):
        h, _ = conv_block_forward(
            h, weights[f"conv{blk}.weight"], weights[f"conv{blk}.bias"],
            weights[f"bn{blk}.gamma"], weights[f"bn{blk}.beta"],
            weights[f"bn{blk}.running_mean"], weights[f"bn{blk}.running_var"],
            training=False, pool=config.variant.pools)
        seen[f"conv{blk}"] = h
    h_seq, _ = bilstm_forward(h, weights, config.variant.bidirectional)
    seen["lstm_h"] = h_seq
    return {name: (float(v.min()), float(v.max())) for name, v in seen.items()}


def calibrate(config: ModelConfig, weights: ModelWeights, windows: np.ndarray,
              max_samples: int = DEFAULT_CALIBRATION_SAMPLES,
              batch_size: int = 64) -> dict[str, tuple[float, float]]:
    """Per-boundary activation min/max over eval-mode passes.

    Uses the first min(max_samples, len(windows)) windows; pass a
    seed-selected subset (see `select_calibration`) for the standard flow.
    """
    if len(windows) == 0:
        raise ValueError("calibration set is empty")
    use = windows[:max_samples]
    ranges: dict[str, tuple[float, float]] = {}
    for start in range(0, len(use), batch_size):
        batch = _trace_boundaries(config, weights, use[start : start + batch_size])
        for name, (lo, hi) in batch.items():
            if name in ranges:
                ranges[name] = (min(ranges[name][0], lo), max(ranges[name][1], hi))
            else:
                ranges[name] = (lo, hi)
    for name, (lo, hi) in ranges.items():
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"non-finite activation range at boundary '{name}'")
    return ranges


def select_calibration(windows: np.ndarray, master_seed: int,
                       max_samples: int = DEFAULT_CALIBRATION_SAMPLES) -> np.ndarray:
    """Seed-deterministic calibration subset drawn from the training split."""
    rng = rng_derive(master_seed, CALIBRATION_STREAM)
    idx = rng.permutation(len(windows))[:max_samples]
    return windows[idx]


def quantize_model(config: ModelConfig, weights: ModelWeights,
                   act_ranges: dict[str, tuple[float, float]]) -> QuantizedModel:
    """Fold BN, quantize weight matrices symmetrically, record activation params."""
    folded = fold_batchnorm(config, weights)
    weight_q, weight_params, biases = {}, {}, {}
    for name, arr in folded.items():
        if name.endswith(("bias", "bias_ih", "bias_hh")):
            biases[name] = arr.astype(np.float32)
        else:
            qp = symmetric_params(arr)
            weight_q[name] = qp.quantize(arr)
            weight_params[name] = qp
    act_params = {name: affine_params(lo, hi) for name, (lo, hi) in act_ranges.items()}
    missing = [b for b in boundary_names(config) if b not in act_params]
    if missing:
        raise ValueError(f"calibration ranges missing boundaries: {missing}")
    return QuantizedModel(config, weight_q, weight_params, biases, act_params)


def _im2col_q(xq: np.ndarray, kernel: int, pad_value: int) -> np.ndarray:
    pad = (kernel - 1) // 2
    xp = np.pad(xq, ((0, 0), (pad, pad), (0, 0)), constant_values=pad_value)
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)
    return np.ascontiguousarray(win).reshape(xq.shape[0], xq.shape[1], -1)


def _int8_matmul(xq: np.ndarray, x_param: QuantParams, wq: np.ndarray,
                 w_param: QuantParams) -> np.ndarray:
    """(x - zp) @ w.T in int32, dequantized to float32."""
    acc = (xq.astype(np.int32) - x_param.zero_point) @ wq.astype(np.int32).T
    return acc.astype(np.float32) * np.float32(x_param.scale * w_param.scale)


def _lstm_scan_q(qm: QuantizedModel, direction: str, xq: np.ndarray,
                 x_param: QuantParams, reverse: bool) -> np.ndarray:
    from .numerics import sigmoid
    h_param = qm.act_params["lstm_h"]
    wq_ih = qm.weight_q[f"lstm.{direction}.weight_ih"]
    wq_hh = qm.weight_q[f"lstm.{direction}.weight_hh"]
    p_ih = qm.weight_params[f"lstm.{direction}.weight_ih"]
    p_hh = qm.weight_params[f"lstm.{direction}.weight_hh"]
    bias = qm.biases[f"lstm.{direction}.bias_ih"] + qm.biases[f"lstm.{direction}.bias_hh"]
    b, t, _ = xq.shape
    hdim = wq_hh.shape[1]
    h_q = np.full((b, hdim), h_param.zero_point, dtype=np.int8)  # represents exact 0
    c = np.zeros((b, hdim), dtype=np.float32)
    out = np.zeros((t, b, hdim), dtype=np.float32)
    order = range(t - 1, -1, -1) if reverse else range(t)
    for step in order:
        z = _int8_matmul(xq[:, step], x_param, wq_ih, p_ih) \
            + _int8_matmul(h_q, h_param, wq_hh, p_hh) + bias
        i = sigmoid(z[:, :hdim])
        f = sigmoid(z[:, hdim : 2 * hdim])
        g = np.tanh(z[:, 2 * hdim : 3 * hdim])
        o = sigmoid(z[:, 3 * hdim :])
        c = f * c + i * g
        h = o * np.tanh(c)
        h_q = h_param.quantize(h)
        out[step] = h_param.dequantize(h_q)
    return out


def quantized_forward(qm: QuantizedModel, x: np.ndarray) -> np.ndarray:
    """Simulated INT8 inference for a window [T, C] or batch [B, T, C]."""
    cfg = qm.config
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1] != cfg.window_len or x.shape[2] != cfg.channels:
        raise ValueError(f"input shape {x.shape} does not match config "
                         f"[B, {cfg.window_len}, {cfg.channels}]")
    h_param = qm.act_params["input"]
    h_q = h_param.quantize(x)
    for blk in range(1, cfg.variant.num_conv_blocks + 1):
        wq = qm.weight_q[f"conv{blk}.weight"]
        f_out = wq.shape[0]
        col = _im2col_q(h_q, cfg.kernel, h_param.zero_point)
        y = _int8_matmul(col.reshape(-1, col.shape[2]), h_param,
                         wq.reshape(f_out, -1), qm.weight_params[f"conv{blk}.weight"])
        y = y.reshape(col.shape[0], col.shape[1], f_out) + qm.biases[f"conv{blk}.bias"]
        y = np.maximum(y, 0)
        if cfg.variant.pools:
            y, _ = maxpool2(y)
        h_param = qm.act_params[f"conv{blk}"]
        h_q = h_param.quantize(y)

    parts = [_lstm_scan_q(qm, "fwd", h_q, h_param, reverse=False)]
    if cfg.variant.bidirectional:
        parts.append(_lstm_scan_q(qm, "bwd", h_q, h_param, reverse=True))
    h_seq = np.concatenate(parts, axis=2).transpose(1, 0, 2)
    h_agg = h_seq.mean(axis=1) if cfg.variant.mean_pool else h_seq[:, -1, :]

    agg_param = qm.act_params["lstm_h"]
    agg_q = agg_param.quantize(h_agg)
    logits = _int8_matmul(agg_q, agg_param, qm.weight_q["head.weight"],
                          qm.weight_params["head.weight"]) + qm.biases["head.bias"]
    probs = softmax(logits)
    return probs[0] if single else probs


def quantized_predict(qm: QuantizedModel, windows: np.ndarray,
                      batch_size: int = 256) -> np.ndarray:
    out = np.empty(len(windows), dtype=np.int64)
    for start in range(0, len(windows), batch_size):
        probs = quantized_forward(qm, windows[start : start + batch_size])
        out[start : start + batch_size] = np.argmax(probs, axis=1)
    return out


def degradation_report(config: ModelConfig, weights: ModelWeights,
                       qm: QuantizedModel, test_set) -> dict:
    """Macro-F1 under the FP32 and INT8 paths plus argmax agreement."""
    from .evalkit import confusion_matrix, macro_f1
    from .model import predict_batch
    fp32_pred = predict_batch(config, weights, test_set.windows)
    int8_pred = quantized_predict(qm, test_set.windows)
    fp32_f1 = macro_f1(confusion_matrix(test_set.labels, fp32_pred, config.num_classes))
    int8_f1 = macro_f1(confusion_matrix(test_set.labels, int8_pred, config.num_classes))
    return {
        "fp32F1": fp32_f1,
        "int8F1": int8_f1,
        "deltaPct": (fp32_f1 - int8_f1) * 100.0,
        "argmaxAgreement": float(np.mean(fp32_pred == int8_pred)),
    }


def quantized_model_to_extra(qm: QuantizedModel) -> dict:
    """JSON-safe record of biases and quantization params for the container."""
    return {
        "biases": {name: arr.astype(np.float64).tolist() for name, arr in qm.biases.items()},
        "activationParams": {name: qp.to_dict() for name, qp in qm.act_params.items()},
    }


def quantized_model_from_container(config: ModelConfig, tensors: dict,
                                   tensor_params: dict, extra: dict) -> QuantizedModel:
    weight_params = {name: QuantParams(scale, zp, "symmetric-weight")
                     for name, (scale, zp) in tensor_params.items()}
    biases = {name: np.asarray(vals, dtype=np.float32)
              for name, vals in extra["biases"].items()}
    act_params = {name: QuantParams.from_dict(d)
                  for name, d in extra["activationParams"].items()}
    return QuantizedModel(config, tensors, weight_params, biases, act_params)
