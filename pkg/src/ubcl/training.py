"""Loss, reverse-mode gradients, AdamW, cosine schedule, and the fit loop.

`backward` hand-derives the gradient of every layer in `model`: softmax,
the linear head, dropout (mask reuse), aggregation, backprop-through-time
over both LSTM directions, max-pool argmax routing, batch-norm batch
statistics, ReLU, and same-padded convolution. It consumes the cache of a
training-mode `forward_batch` and the loss gradient w.r.t. the output
probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelConfig, ModelWeights, build_model, forward_batch, predict_batch
from .numerics import Rng, rng_derive

PROB_FLOOR = 1e-12

# Incremented whenever a probability had to be clamped before taking its log.
clamp_warnings = 0


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 3e-3
    lr_min: float | None = None  # defaults to lr_max / 100
    weight_decay: float = 1e-4
    batch_size: int = 32
    dropout_rate: float = 0.2
    max_epochs: int = 200
    patience: int = 10
    class_weighting: bool = True
    master_seed: int = 42
    num_seeds: int = 5

    def __post_init__(self):
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")
        if self.effective_lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")

    @property
    def effective_lr_min(self) -> float:
        return self.lr_max / 100.0 if self.lr_min is None else self.lr_min

    def to_dict(self) -> dict:
        return {
            "lr_max": self.lr_max, "lr_min": self.effective_lr_min,
            "weight_decay": self.weight_decay, "batch_size": self.batch_size,
            "dropout_rate": self.dropout_rate, "max_epochs": self.max_epochs,
            "patience": self.patience, "class_weighting": self.class_weighting,
            "master_seed": self.master_seed, "num_seeds": self.num_seeds,
        }


def weighted_cross_entropy(probs: np.ndarray, label: int, class_weights: np.ndarray) -> float:
    """-w[label] * log(p[label]) for one sample, with a 1e-12 floor."""
    global clamp_warnings
    p = float(probs[label])
    if p <= 0.0:
        clamp_warnings += 1
        p = PROB_FLOOR
    return -float(class_weights[label]) * math.log(p)


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray, class_weights: np.ndarray):
    """Mean weighted cross-entropy over a batch and its gradient w.r.t. probs."""
    global clamp_warnings
    b = probs.shape[0]
    w = class_weights[labels]
    p = probs[np.arange(b), labels]
    low = p <= 0.0
    if low.any():
        clamp_warnings += int(low.sum())
        p = np.maximum(p, PROB_FLOOR)
    loss = float(np.mean(-w * np.log(p)))
    dprobs = np.zeros_like(probs)
    dprobs[np.arange(b), labels] = -w / (p * b)
    return loss, dprobs


def inverse_frequency_weights(label_counts: np.ndarray) -> np.ndarray:
    """w_k = N / (K * count_k); averages to 1 for balanced counts."""
    counts = np.asarray(label_counts, dtype=np.float64)
    if (counts <= 0).any():
        empty = np.flatnonzero(counts <= 0).tolist()
        raise ValueError(
            f"classes {empty} have zero training samples; drop or merge them before weighting")
    return (counts.sum() / (len(counts) * counts)).astype(np.float64)


def _softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def _batchnorm_backward(dy: np.ndarray, gamma: np.ndarray, bn_cache: dict):
    x_hat, inv_std = bn_cache["x_hat"], bn_cache["inv_std"]
    dgamma = np.sum(dy * x_hat, axis=(0, 1))
    dbeta = np.sum(dy, axis=(0, 1))
    if bn_cache["training"]:
        n = dy.shape[0] * dy.shape[1]
        dx = (gamma * inv_std) * (dy - dbeta / n - x_hat * (dgamma / n))
    else:
        dx = dy * gamma * inv_std
    return dx, dgamma, dbeta


def _maxpool2_backward(dy: np.ndarray, pool_idx: np.ndarray, pre_pool_t: int) -> np.ndarray:
    b, t2, f = dy.shape
    dxr = np.zeros((b, t2, 2, f), dtype=dy.dtype)
    np.put_along_axis(dxr, pool_idx[:, :, None, :], dy[:, :, None, :], axis=2)
    dx = np.zeros((b, pre_pool_t, f), dtype=dy.dtype)
    dx[:, : 2 * t2] = dxr.reshape(b, 2 * t2, f)
    return dx


def _conv1d_backward(dy: np.ndarray, col: np.ndarray, weight: np.ndarray, in_shape: tuple):
    f, c_in, k = weight.shape
    b, t = dy.shape[0], dy.shape[1]
    dw = np.einsum("btf,btm->fm", dy, col).reshape(f, c_in, k)
    db = np.sum(dy, axis=(0, 1))
    dcol = (dy @ weight.reshape(f, -1)).reshape(b, t, c_in, k)
    pad = (k - 1) // 2
    dx_pad = np.zeros((b, t + 2 * pad, c_in), dtype=dy.dtype)
    for kk in range(k):
        dx_pad[:, kk : kk + t, :] += dcol[:, :, :, kk]
    return dx_pad[:, pad : pad + in_shape[1], :], dw, db


def _lstm_direction_backward(dh_out: np.ndarray, x_seq: np.ndarray,
                             w_ih: np.ndarray, w_hh: np.ndarray, cache: dict):
    """BPTT for one direction. dh_out is [T, B, H] indexed by position."""
    t_len, b, hdim = dh_out.shape
    hs, cs, gates = cache["hs"], cache["cs"], cache["gates"]
    order = list(range(t_len - 1, -1, -1)) if cache["reverse"] else list(range(t_len))

    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros(4 * hdim, dtype=w_ih.dtype)
    dx_seq = np.zeros_like(x_seq)
    dh_next = np.zeros((b, hdim), dtype=x_seq.dtype)
    dc_next = np.zeros((b, hdim), dtype=x_seq.dtype)
    zeros = np.zeros((b, hdim), dtype=x_seq.dtype)

    for j in range(t_len - 1, -1, -1):
        t = order[j]
        c_prev = cs[order[j - 1]] if j > 0 else zeros
        h_prev = hs[order[j - 1]] if j > 0 else zeros
        i, f, g, o = gates["i"][t], gates["f"][t], gates["g"][t], gates["o"][t]
        tc = gates["tanh_c"][t]

        dh = dh_out[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        do = dh * tc
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f

        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)

        dw_ih += dz.T @ x_seq[:, t]
        dw_hh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx_seq[:, t] = dz @ w_ih
        dh_next = dz @ w_hh

    # bias_ih and bias_hh enter the pre-activation as a plain sum
    return dx_seq, {"weight_ih": dw_ih, "weight_hh": dw_hh, "bias_ih": db, "bias_hh": db.copy()}


def backward(config: ModelConfig, weights: ModelWeights, cache: dict,
             dprobs: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every learnable tensor, keyed like ModelWeights."""
    grads: dict[str, np.ndarray] = {}

    dlogits = _softmax_backward(cache["probs"], dprobs)
    grads["head.weight"] = dlogits.T @ cache["h_drop"]
    grads["head.bias"] = dlogits.sum(axis=0)
    dh_drop = dlogits @ weights["head.weight"]

    mask = cache["dropout_mask"]
    dh_agg = dh_drop * mask if mask is not None else dh_drop

    t_len = cache["h_seq_t"]
    b, d = dh_agg.shape
    dh_seq = np.zeros((b, t_len, d), dtype=dh_agg.dtype)
    if config.variant.mean_pool:
        dh_seq[:] = dh_agg[:, None, :] / t_len
    else:
        dh_seq[:, -1, :] = dh_agg

    lstm_cache = cache["lstm"]
    x_seq = lstm_cache["x_seq"]
    hdim = config.lstm_hidden
    dh_t = dh_seq.transpose(1, 0, 2)  # [T, B, D]
    dx_seq, dir_grads = _lstm_direction_backward(
        np.ascontiguousarray(dh_t[:, :, :hdim]), x_seq,
        weights["lstm.fwd.weight_ih"], weights["lstm.fwd.weight_hh"], lstm_cache["fwd"])
    for k, v in dir_grads.items():
        grads[f"lstm.fwd.{k}"] = v
    if config.variant.bidirectional:
        dx_b, dir_grads = _lstm_direction_backward(
            np.ascontiguousarray(dh_t[:, :, hdim:]), x_seq,
            weights["lstm.bwd.weight_ih"], weights["lstm.bwd.weight_hh"], lstm_cache["bwd"])
        dx_seq += dx_b
        for k, v in dir_grads.items():
            grads[f"lstm.bwd.{k}"] = v

    dh = dx_seq
    for blk in range(config.variant.num_conv_blocks, 0, -1):
        blk_cache = cache["blocks"][blk - 1]
        if blk_cache["pool"]:
            dh = _maxpool2_backward(dh, blk_cache["pool_idx"], blk_cache["pre_pool_t"])
        dh = dh * blk_cache["relu_mask"]
        dh, dgamma, dbeta = _batchnorm_backward(dh, weights[f"bn{blk}.gamma"], blk_cache["bn"])
        grads[f"bn{blk}.gamma"] = dgamma
        grads[f"bn{blk}.beta"] = dbeta
        dh, dw, dbias = _conv1d_backward(
            dh, blk_cache["col"], weights[f"conv{blk}.weight"], blk_cache["in_shape"])
        grads[f"conv{blk}.weight"] = dw
        grads[f"conv{blk}.bias"] = dbias

    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    return grads


def init_moments(weights: ModelWeights) -> dict:
    zeros = lambda: {n: np.zeros_like(weights[n]) for n in weights.learnable_names()}
    return {"m": zeros(), "v": zeros()}


def adamw_step(weights: ModelWeights, grads: dict, moments: dict, t: int, lr: float,
               weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update, in place (t counts from 1)."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = moments["m"][name]
        v = moments["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w = weights[name]
        update = (m / bc1) / (np.sqrt(v / bc2) + eps) + weight_decay * w
        w -= (lr * update).astype(w.dtype)


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max (epoch 0) to lr_min (epoch == total)."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def evaluate_macro_f1(config: ModelConfig, weights: ModelWeights, dataset) -> float:
    from .evalkit import confusion_matrix, macro_f1
    preds = predict_batch(config, weights, dataset.windows)
    return macro_f1(confusion_matrix(dataset.labels, preds, config.num_classes))


def fit(config: ModelConfig, train_config: TrainConfig, train_set, val_set,
        rng: Rng | None = None):
    """Train with AdamW + cosine annealing and validation-F1 early stopping.

    Tracks validation macro-F1 every epoch, restores the weights of the best
    validation epoch, and stops once `patience` epochs pass without
    improvement. Returns (best_weights, history); history rows carry
    {epoch, lr, trainLoss, valMacroF1, bestSoFar}.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("fit requires non-empty train and validation sets")
    tc = train_config
    rng = rng or rng_derive(tc.master_seed, 0)
    cfg = replace(config, dropout_rate=tc.dropout_rate)
    weights = build_model(cfg, rng)
    counts = np.bincount(train_set.labels, minlength=cfg.num_classes)
    if tc.class_weighting:
        class_weights = inverse_frequency_weights(counts)
    else:
        class_weights = np.ones(cfg.num_classes, dtype=np.float64)

    moments = init_moments(weights)
    step = 0
    best_f1 = -1.0
    best_weights = weights.copy()
    bad_epochs = 0
    history: list[dict] = []

    for epoch in range(tc.max_epochs):
        lr = cosine_lr(epoch, tc.max_epochs, tc.lr_max, tc.effective_lr_min)
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start : start + tc.batch_size]
            probs, cache = forward_batch(cfg, weights, train_set.windows[idx],
                                         training=True, rng=rng)
            loss, dprobs = batch_cross_entropy(probs, train_set.labels[idx], class_weights)
            grads = backward(cfg, weights, cache, dprobs)
            step += 1
            adamw_step(weights, grads, moments, step, lr, tc.weight_decay)
            epoch_loss += loss * len(idx)
        epoch_loss /= len(order)

        val_f1 = evaluate_macro_f1(cfg, weights, val_set)
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_weights = weights.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        history.append({
            "epoch": epoch, "lr": lr, "trainLoss": epoch_loss,
            "valMacroF1": val_f1, "bestSoFar": best_f1,
        })
        if bad_epochs >= tc.patience:
            break

    return best_weights, history


# Search ranges: lr and weight decay log-uniform, dropout uniform.
SEARCH_LR_RANGE = (1e-4, 1e-2)
SEARCH_DECAY_RANGE = (1e-5, 5e-2)
SEARCH_DROPOUT_RANGE = (0.0, 0.5)
SEARCH_EPOCHS = 10
SEARCH_PATIENCE = 5


def sample_search_point(rng: Rng) -> dict:
    log_u = lambda lo, hi: float(10 ** rng.uniform(math.log10(lo), math.log10(hi), dtype=np.float64))
    return {
        "lr_max": log_u(*SEARCH_LR_RANGE),
        "weight_decay": log_u(*SEARCH_DECAY_RANGE),
        "dropout_rate": float(rng.uniform(*SEARCH_DROPOUT_RANGE, dtype=np.float64)),
    }


def random_search(config: ModelConfig, base: TrainConfig, train_set, val_set,
                  trials: int, rng: Rng | None = None):
    """Deterministic random search over (lr, weight decay, dropout).

    Each trial trains for 10 epochs with patience 5; the best validation
    macro-F1 wins, ties broken by lower trial index. Returns
    (best TrainConfig, trial records).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng or rng_derive(base.master_seed, 0)
    records = []
    best_idx, best_f1 = 0, -1.0
    for trial in range(trials):
        point = sample_search_point(rng)
        tc = replace(base, max_epochs=SEARCH_EPOCHS, patience=SEARCH_PATIENCE, **point)
        _, history = fit(config, tc, train_set, val_set,
                         rng=rng_derive(base.master_seed, 1000 + trial))
        f1 = max(row["valMacroF1"] for row in history)
        records.append({"trial": trial, **point, "valMacroF1": f1})
        if f1 > best_f1:
            best_f1, best_idx = f1, trial
    chosen = records[best_idx]
    best = replace(base, lr_max=chosen["lr_max"], weight_decay=chosen["weight_decay"],
                   dropout_rate=chosen["dropout_rate"])
    return best, records
