import numpy as np
import pytest

from conftest import tiny_config
from ubcl.model import (BN_EPS, ModelConfig, ModelWeights, Variant, aggregate, bilstm_forward,
                        build_model, conv_block_forward, forward_batch, lstm_cell, maxpool2,
                        model_forward, tensor_order)
from ubcl.numerics import FLOAT, ShapeError, rng_derive, sigmoid
from ubcl.presets import PRESETS

UCI = ModelConfig(channels=9, window_len=128, num_classes=6)


def test_build_model_shapes_match_contract():
    w = build_model(UCI, rng_derive(42, 0))
    expected = {
        "conv1.weight": (16, 9, 5), "conv1.bias": (16,),
        "conv2.weight": (16, 16, 5),
        "lstm.fwd.weight_ih": (96, 16), "lstm.fwd.weight_hh": (96, 24),
        "lstm.fwd.bias_ih": (96,), "lstm.bwd.weight_ih": (96, 16),
        "head.weight": (6, 48), "head.bias": (6,),
    }
    for name, shape in expected.items():
        assert w[name].shape == shape
    for prefix in ("bn1", "bn2"):
        for part in ("gamma", "beta", "running_mean", "running_var"):
            assert w[f"{prefix}.{part}"].shape == (16,)


def test_build_model_deterministic():
    a = build_model(UCI, rng_derive(42, 0))
    b = build_model(UCI, rng_derive(42, 0))
    assert a.names() == b.names()
    for name in a.names():
        assert np.array_equal(a[name], b[name])


def test_unidirectional_variant_drops_backward_tensors():
    cfg = ModelConfig(9, 128, 6, variant=Variant.UNIDIR)
    w = build_model(cfg, rng_derive(42, 0))
    assert not any(n.startswith("lstm.bwd") for n in w.names())
    assert w["head.weight"].shape == (6, 24)


def test_single_conv_variant_drops_second_block():
    cfg = ModelConfig(9, 128, 6, variant=Variant.SINGLE_CONV)
    w = build_model(cfg, rng_derive(42, 0))
    assert not any(n.startswith(("conv2", "bn2")) for n in w.names())


def test_forget_gate_bias_initialized_to_one():
    w = build_model(UCI, rng_derive(42, 0))
    h = UCI.lstm_hidden
    for d in ("fwd", "bwd"):
        b = w[f"lstm.{d}.bias_ih"]
        assert np.all(b[h: 2 * h] == 1.0)
        assert np.all(b[:h] == 0.0) and np.all(b[2 * h:] == 0.0)


def _identity_bn(f):
    # gamma = sqrt(1 + eps) cancels the epsilon so eval-mode BN is exact identity
    gamma = np.full(f, np.sqrt(1.0 + BN_EPS), dtype=FLOAT)
    beta = np.zeros(f, dtype=FLOAT)
    rm = np.zeros(f, dtype=FLOAT)
    rv = np.ones(f, dtype=FLOAT)
    return gamma, beta, rm, rv


def test_conv_block_constant_signal_interior():
    x = np.ones((1, 16, 1), dtype=FLOAT)
    weight = np.ones((1, 1, 5), dtype=FLOAT)
    bias = np.zeros(1, dtype=FLOAT)
    y, _ = conv_block_forward(x, weight, bias, *_identity_bn(1), training=False, pool=False)
    assert np.allclose(y[0, 2:-2, 0], 5.0, atol=1e-5)
    assert y[0, 0, 0] < 5.0  # zero padding shortens the edge taps


def test_conv_block_zero_input_zero_bias():
    x = np.zeros((2, 12, 3), dtype=FLOAT)
    weight = rng_derive(0, 0).normal(size=(4, 3, 5))
    bias = np.zeros(4, dtype=FLOAT)
    y, _ = conv_block_forward(x, weight, bias, *_identity_bn(4), training=False, pool=False)
    assert np.array_equal(y, np.zeros_like(y))


def test_conv_block_channel_mismatch_raises():
    x = np.zeros((1, 12, 3), dtype=FLOAT)
    weight = np.zeros((4, 2, 5), dtype=FLOAT)
    with pytest.raises(ShapeError):
        conv_block_forward(x, weight, np.zeros(4, dtype=FLOAT), *_identity_bn(4),
                           training=False, pool=False)


def test_pooling_halves_each_block():
    rng = rng_derive(1, 0)
    w = build_model(UCI, rng)
    x = rng.normal(size=(1, 128, 9))
    h1, _ = conv_block_forward(x, w["conv1.weight"], w["conv1.bias"], w["bn1.gamma"],
                               w["bn1.beta"], w["bn1.running_mean"], w["bn1.running_var"],
                               training=False, pool=True)
    assert h1.shape == (1, 64, 16)
    h2, _ = conv_block_forward(h1, w["conv2.weight"], w["conv2.bias"], w["bn2.gamma"],
                               w["bn2.beta"], w["bn2.running_mean"], w["bn2.running_var"],
                               training=False, pool=True)
    assert h2.shape == (1, 32, 16)


def test_maxpool2_examples():
    y, _ = maxpool2(np.array([1.0, 3.0, 2.0, 5.0], dtype=FLOAT).reshape(1, 4, 1))
    assert np.array_equal(y[0, :, 0], [3.0, 5.0])
    const = np.full((1, 10, 3), 2.5, dtype=FLOAT)
    y, _ = maxpool2(const)
    assert y.shape == (1, 5, 3) and np.all(y == 2.5)
    y, _ = maxpool2(np.array([7.0, 1.0, 1.0, 1.0, 9.0], dtype=FLOAT).reshape(1, 5, 1))
    assert np.array_equal(y[0, :, 0], [7.0, 1.0])  # trailing 9 dropped


def test_maxpool2_rejects_short_input():
    with pytest.raises(ShapeError):
        maxpool2(np.zeros((1, 1, 2), dtype=FLOAT))


def _zero_cell(fin=3, h=2):
    z = lambda *s: np.zeros(s, dtype=np.float64)
    return z(4 * h, fin), z(4 * h, h), z(4 * h), z(4 * h)


def test_lstm_cell_zero_weights():
    w_ih, w_hh, b_ih, b_hh = _zero_cell()
    h, c, _ = lstm_cell(np.array([1.0, -2.0, 3.0]), np.zeros(2), np.zeros(2),
                        w_ih, w_hh, b_ih, b_hh)
    assert np.array_equal(h, np.zeros(2)) and np.array_equal(c, np.zeros(2))


def test_lstm_cell_forget_bias_limit():
    w_ih, w_hh, b_ih, b_hh = _zero_cell(fin=1, h=1)
    b_ih[1] = 10.0  # forget gate slice
    h, c, _ = lstm_cell(np.array([0.7]), np.zeros(1), np.array([1.0]),
                        w_ih, w_hh, b_ih, b_hh)
    f = sigmoid(np.array([10.0]))[0]
    assert c[0] == pytest.approx(f, abs=1e-7)
    assert c[0] == pytest.approx(0.99995, abs=1e-4)


def test_lstm_recurrence_identity_with_forced_gates():
    w_ih, w_hh, b_ih, b_hh = _zero_cell(fin=1, h=1)
    b_ih[0] = -30.0  # input gate ~ 0
    b_ih[1] = 30.0   # forget gate ~ 1
    x = np.array([0.5])
    h1, c1, _ = lstm_cell(x, np.zeros(1), np.zeros(1), w_ih, w_hh, b_ih, b_hh)
    h2, c2, _ = lstm_cell(x, h1, c1, w_ih, w_hh, b_ih, b_hh)
    assert np.allclose(c2, c1, atol=1e-9) and np.allclose(h2, h1, atol=1e-9)


def _small_lstm_weights(fin, h, seed, tie_directions=False):
    cfg = ModelConfig(channels=fin, window_len=8, num_classes=2, conv_filters=fin,
                      kernel=3, lstm_hidden=h)
    w = build_model(cfg, rng_derive(seed, 0))
    if tie_directions:
        for part in ("weight_ih", "weight_hh", "bias_ih", "bias_hh"):
            w[f"lstm.bwd.{part}"] = w[f"lstm.fwd.{part}"].copy()
    return w


def test_bilstm_time_reversal_symmetry():
    w = _small_lstm_weights(fin=3, h=4, seed=5, tie_directions=True)
    x = rng_derive(9, 0).normal(size=(2, 3, 3))
    out, _ = bilstm_forward(x, w, bidirectional=True)
    out_rev, _ = bilstm_forward(x[:, ::-1].copy(), w, bidirectional=True)
    swapped = np.concatenate([out[:, :, 4:], out[:, :, :4]], axis=2)
    assert np.allclose(out_rev, swapped[:, ::-1], atol=1e-6)


def test_bilstm_zero_weights_zero_output():
    w = _small_lstm_weights(fin=3, h=4, seed=5)
    for name in w.names():
        if name.startswith("lstm"):
            w[name] = np.zeros_like(w[name])
    out, _ = bilstm_forward(np.ones((1, 6, 3), dtype=FLOAT), w, bidirectional=True)
    assert np.array_equal(out, np.zeros_like(out))


def _oracle_bilstm(x, w, h):
    """Scalar-loop float64 reference for a bidirectional scan."""
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    def scan(seq, w_ih, w_hh, b_ih, b_hh):
        hs = []
        hv = np.zeros(h)
        cv = np.zeros(h)
        for x_t in seq:
            z = w_ih @ x_t + w_hh @ hv + b_ih + b_hh
            i, f = sig(z[:h]), sig(z[h: 2 * h])
            g, o = np.tanh(z[2 * h: 3 * h]), sig(z[3 * h:])
            cv = f * cv + i * g
            hv = o * np.tanh(cv)
            hs.append(hv.copy())
        return hs

    g = lambda n: w[n].astype(np.float64)
    fwd = scan(list(x), g("lstm.fwd.weight_ih"), g("lstm.fwd.weight_hh"),
               g("lstm.fwd.bias_ih"), g("lstm.fwd.bias_hh"))
    bwd = list(reversed(scan(list(x[::-1]), g("lstm.bwd.weight_ih"), g("lstm.bwd.weight_hh"),
                             g("lstm.bwd.bias_ih"), g("lstm.bwd.bias_hh"))))
    return np.stack([np.concatenate([f, b]) for f, b in zip(fwd, bwd)])


def test_bilstm_matches_double_precision_oracle():
    w = _small_lstm_weights(fin=3, h=4, seed=11)
    x = rng_derive(13, 0).normal(size=(1, 3, 3))
    out, _ = bilstm_forward(x, w, bidirectional=True)
    ref = _oracle_bilstm(x[0].astype(np.float64), w, h=4)
    rel = np.abs(out[0] - ref).max() / max(np.abs(ref).max(), 1e-12)
    assert rel <= 1e-5


def test_aggregate_examples():
    seq = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert np.array_equal(aggregate(seq, Variant.BASE)[0], [3.0, 4.0])
    assert np.array_equal(aggregate(seq, Variant.MEAN_POOL)[0], [2.0, 3.0])
    single = np.array([[[5.0, 6.0]]])
    assert np.array_equal(aggregate(single, Variant.BASE), aggregate(single, Variant.MEAN_POOL))


def test_aggregate_empty_sequence_raises():
    with pytest.raises(ShapeError):
        aggregate(np.zeros((1, 0, 4), dtype=FLOAT), Variant.BASE)


def test_forward_probabilities_normalized():
    w = build_model(UCI, rng_derive(42, 0))
    x = rng_derive(1, 0).normal(size=(128, 9))
    probs, _ = model_forward(UCI, w, x)
    assert probs.shape == (6,)
    assert abs(probs.sum() - 1.0) <= 1e-6


def test_zero_head_weights_uniform_distribution():
    w = build_model(UCI, rng_derive(42, 0))
    w["head.weight"] = np.zeros_like(w["head.weight"])
    w["head.bias"] = np.zeros_like(w["head.bias"])
    probs, _ = model_forward(UCI, w, rng_derive(1, 0).normal(size=(128, 9)))
    assert np.allclose(probs, 1.0 / 6.0, atol=1e-7)


def test_eval_forward_is_pure_and_deterministic():
    cfg = ModelConfig(9, 128, 6, dropout_rate=0.5)
    w = build_model(cfg, rng_derive(42, 0))
    before = {n: w[n].copy() for n in w.names()}
    x = rng_derive(1, 0).normal(size=(128, 9))
    p1, _ = model_forward(cfg, w, x)
    p2, _ = model_forward(cfg, w, x)
    assert np.array_equal(p1, p2)
    for name in w.names():
        assert np.array_equal(w[name], before[name])


def test_training_forward_updates_running_stats():
    w = build_model(UCI, rng_derive(42, 0))
    before = w["bn1.running_mean"].copy()
    forward_batch(UCI, w, rng_derive(1, 0).normal(size=(4, 128, 9)),
                  training=True, rng=rng_derive(2, 0))
    assert not np.array_equal(w["bn1.running_mean"], before)


def test_class_permutation_equivariance():
    w = build_model(UCI, rng_derive(42, 0))
    x = rng_derive(1, 0).normal(size=(128, 9))
    probs, _ = model_forward(UCI, w, x)
    perm = np.array([3, 0, 5, 1, 4, 2])
    w2 = w.copy()
    w2["head.weight"] = w["head.weight"][perm]
    w2["head.bias"] = w["head.bias"][perm]
    probs2, _ = model_forward(UCI, w2, x)
    assert np.allclose(probs2, probs[perm], atol=1e-7)


def test_forward_rejects_nan_and_bad_shape():
    w = build_model(UCI, rng_derive(42, 0))
    bad = np.zeros((128, 9), dtype=FLOAT)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        model_forward(UCI, w, bad)
    with pytest.raises(ShapeError):
        model_forward(UCI, w, np.zeros((64, 9), dtype=FLOAT))


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_shape_chain_for_every_preset(preset):
    p = PRESETS[preset]
    cfg = p.model_config()
    rng = rng_derive(3, 0)
    w = build_model(cfg, rng)
    x = rng.normal(size=(2, cfg.window_len, cfg.channels))
    h = x
    expected_t = cfg.window_len
    for blk in (1, 2):
        h, _ = conv_block_forward(h, w[f"conv{blk}.weight"], w[f"conv{blk}.bias"],
                                  w[f"bn{blk}.gamma"], w[f"bn{blk}.beta"],
                                  w[f"bn{blk}.running_mean"], w[f"bn{blk}.running_var"],
                                  training=False, pool=True)
        expected_t //= 2
        assert h.shape == (2, expected_t, cfg.conv_filters)
    seq, _ = bilstm_forward(h, w, bidirectional=True)
    assert seq.shape == (2, expected_t, 2 * cfg.lstm_hidden)
    agg = aggregate(seq, cfg.variant)
    assert agg.shape == (2, 2 * cfg.lstm_hidden)
    probs, _ = forward_batch(cfg, w, x)
    assert probs.shape == (2, cfg.num_classes)


@pytest.mark.parametrize("variant", list(Variant))
def test_forward_all_variants(variant):
    cfg = tiny_config(window_len=12, variant=variant)
    rng = rng_derive(4, 0)
    w = build_model(cfg, rng)
    probs, _ = forward_batch(cfg, w, rng.normal(size=(3, 12, 2)))
    assert probs.shape == (3, 2)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_batch_forward_matches_single_window_in_eval():
    w = build_model(UCI, rng_derive(42, 0))
    x = rng_derive(8, 0).normal(size=(4, 128, 9))
    batch, _ = forward_batch(UCI, w, x)
    for i in range(4):
        single, _ = model_forward(UCI, w, x[i])
        assert np.allclose(single, batch[i], atol=1e-6)


def test_tensor_order_is_serialization_contract():
    names = [n for n, _ in tensor_order(UCI)]
    w = build_model(UCI, rng_derive(0, 0))
    assert names == w.names()
