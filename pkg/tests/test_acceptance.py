"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run with `pytest -v tests/test_acceptance.py` for one line per criterion;
each test also prints an explicit PASS line with the measured values.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from test_datapipe import analytic_gain, steady_state_gain
from test_training import run_gradient_check

from ubcl import presets
from ubcl.analysis import cost_report, count_macs, count_params, lstm_params_single_bias
from ubcl.cli import main
from ubcl.datapipe import (RawRecording, default_synth_spec, default_test_subjects,
                           sliding_windows, split_and_normalize, synth_generate, zscore_apply,
                           zscore_fit)
from ubcl.evalkit import best_artifact, multi_seed_run, robustness_suite
from ubcl.model import ModelConfig, Variant, build_model
from ubcl.numerics import rng_derive
from ubcl.quantization import calibrate, degradation_report, quantize_model, select_calibration
from ubcl.training import TrainConfig

MAC_TIGHT = {"uci-har": 420, "motionsense": 389, "wisdm": 359, "pamap2": 523,
             "opportunity": 1140}
MAC_LOOSE = {"skoda": 444, "daphnet": 245}


def _report(criterion: str, detail: str) -> None:
    print(f"[acceptance] {criterion}: PASS ({detail})")


@pytest.fixture(scope="module")
def synthetic_run():
    """5-seed training on the default synthetic task, shared by criteria 5-7."""
    spec = default_synth_spec()
    dataset = synth_generate(spec, seed=42)
    bundle = split_and_normalize(dataset, default_test_subjects(dataset))
    config = ModelConfig(spec.channels, spec.window_len, spec.num_classes)
    tc = TrainConfig(max_epochs=50, num_seeds=5, master_seed=42)
    start = time.time()
    report, artifacts = multi_seed_run(config, tc, bundle)
    elapsed = time.time() - start
    return config, bundle, report, artifacts, elapsed


def test_c1_mac_oracle(tmp_path):
    start = time.time()
    for name, ref_k in MAC_TIGHT.items():
        total = sum(count_macs(presets.PRESETS[name].model_config()).values())
        rel = abs(total - ref_k * 1000) / (ref_k * 1000)
        assert rel <= 0.01, f"{name}: {total} vs {ref_k}K off by {rel * 100:.2f}%"
    for name, ref_k in MAC_LOOSE.items():
        total = sum(count_macs(presets.PRESETS[name].model_config()).values())
        rel = abs(total - ref_k * 1000) / (ref_k * 1000)
        assert rel <= 0.20, f"{name}: {total} vs {ref_k}K off by {rel * 100:.2f}%"
    elapsed = time.time() - start
    assert elapsed < 1.0, f"MAC oracle took {elapsed:.2f}s"
    # the analyze command must carry the deviation note for the loose presets
    for name in MAC_LOOSE:
        out = tmp_path / name
        assert main(["analyze", "--preset", name, "--out", str(out)]) == 0
        assert "deviationNote" in json.loads((out / "cost_report.json").read_text())
    _report("criterion 1 (MAC oracle)", f"5 tight presets within 1%, 2 within 20%, "
            f"deviation notes emitted, closed forms in {elapsed:.3f}s")


def test_c2_parameter_oracle():
    start = time.time()
    uci = presets.PRESETS["uci-har"].model_config()
    assert lstm_params_single_bias(uci) == 7872
    totals = [cost_report(p.model_config()).total_params for p in presets.PRESETS.values()]
    avg = sum(totals) / len(totals)
    assert abs(avg - 11400) / 11400 <= 0.05, f"average {avg}"
    for preset in presets.PRESETS.values():
        for variant in Variant:
            cfg = preset.model_config(variant=variant)
            built = build_model(cfg, rng_derive(0, 0)).num_learnable_scalars()
            assert sum(count_params(cfg).values()) == built, (preset.name, variant)
    elapsed = time.time() - start
    assert elapsed < 1.0
    _report("criterion 2 (parameter oracle)",
            f"single-bias 7872 exact, 8-preset average {avg:.0f} vs 11400, "
            f"structural cross-check 8x5 configs, {elapsed:.2f}s")


def test_c3_ablation_cost_delta():
    start = time.time()
    uci = presets.PRESETS["uci-har"].model_config()
    base = sum(count_macs(uci).values())
    no_pool = sum(count_macs(replace(uci, variant=Variant.NO_POOL)).values())
    ratio = no_pool / base
    assert 2.8 <= ratio <= 3.3, f"ratio {ratio:.3f}"
    elapsed = time.time() - start
    assert elapsed < 1.0
    _report("criterion 3 (ablation cost delta)", f"A1/A0 MAC ratio {ratio:.3f} in [2.8, 3.3]")


def test_c4_gradient_correctness():
    start = time.time()
    worst = 0.0
    for variant in Variant:
        for seed in range(5):
            err = run_gradient_check(variant, seed)
            worst = max(worst, err)
            assert err < 1e-4, f"{variant.value} seed {seed}: rel err {err:.2e}"
    elapsed = time.time() - start
    assert elapsed < 120.0, f"gradient grid took {elapsed:.0f}s"
    _report("criterion 4 (gradient correctness)",
            f"5 variants x 5 seeds, worst rel err {worst:.2e} < 1e-4, {elapsed:.0f}s")


def test_c5_desk_scale_learning(synthetic_run):
    config, bundle, report, artifacts, elapsed = synthetic_run
    assert all(len(a["history"]) <= 50 for a in artifacts)
    assert report.mean_f1 >= 0.95, f"mean macro F1 {report.mean_f1:.4f}"
    assert report.std_f1 < 0.05, f"seed spread {report.std_f1:.4f}"
    assert elapsed < 600.0, f"training took {elapsed:.0f}s"
    _report("criterion 5 (desk-scale learning)",
            f"5-seed mean macro F1 {report.mean_f1:.4f} +/- {report.std_f1:.4f} "
            f"in {elapsed:.0f}s")


def test_c6_quantization_robustness(synthetic_run):
    config, bundle, report, artifacts, _ = synthetic_run
    start = time.time()
    weights = best_artifact(artifacts)["weights"]
    calib = select_calibration(bundle.train.windows, master_seed=42)
    qm = quantize_model(config, weights, calibrate(config, weights, calib))
    deg = degradation_report(config, weights, qm, bundle.test)
    elapsed = time.time() - start
    assert deg["deltaPct"] <= 2.0, f"degradation {deg['deltaPct']:.2f} points"
    assert deg["argmaxAgreement"] >= 0.95, f"agreement {deg['argmaxAgreement']:.3f}"
    assert elapsed < 60.0
    _report("criterion 6 (quantization robustness)",
            f"delta {deg['deltaPct']:.2f} pts <= 2.0, agreement "
            f"{deg['argmaxAgreement'] * 100:.1f}% >= 95%, {elapsed:.1f}s")


def test_c7_robustness_ordering(synthetic_run):
    config, bundle, report, artifacts, _ = synthetic_run
    start = time.time()
    weights = best_artifact(artifacts)["weights"]
    suite = robustness_suite(config, weights, bundle.test)  # drops every channel
    elapsed = time.time() - start
    assert suite["jitter"]["deltaPct"] < 2.0, suite["jitter"]
    assert suite["channel-dropout"]["deltaPct"] > 30.0, suite["channel-dropout"]
    assert elapsed < 120.0
    _report("criterion 7 (robustness ordering)",
            f"jitter {suite['jitter']['deltaPct']:.2f} pts < 2, channel dropout "
            f"{suite['channel-dropout']['deltaPct']:.2f} pts > 30, {elapsed:.1f}s")


def test_c8_determinism(tmp_path):
    start = time.time()
    spec = {"num_classes": 3, "channels": 3, "window_len": 32, "samples_per_class": 16,
            "subject_count": 4, "episodic_classes": [2], "noise_std": 0.1}
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps(spec))

    pairs = []
    for tag in ("x", "y"):
        a_out = tmp_path / f"analyze_{tag}"
        assert main(["analyze", "--preset", "uci-har", "--out", str(a_out)]) == 0
        t_out = tmp_path / f"train_{tag}"
        assert main(["train", "--synthetic", str(spec_file), "--epochs", "3", "--seeds", "2",
                     "--out", str(t_out)]) == 0
        q_out = tmp_path / f"quant_{tag}"
        assert main(["quantize", "--model", str(t_out / "model.ubcl"), "--synthetic",
                     str(spec_file), "--out", str(q_out)]) == 0
        pairs.append((a_out, t_out, q_out))

    (a1, t1, q1), (a2, t2, q2) = pairs
    compared = []
    for d1, d2, name in [
        (a1, a2, "cost_report.json"), (a1, a2, "cost_table.txt"),
        (t1, t2, "model.ubcl"), (t1, t2, "report.json"),
        (t1, t2, "history_seed0.jsonl"), (t1, t2, "history_seed1.jsonl"),
        (t1, t2, "history.png"), (t1, t2, "confusion.png"),
        (q1, q2, "model_int8.ubcl"), (q1, q2, "quantization.json"),
    ]:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), f"{name} differs"
        compared.append(name)
    elapsed = time.time() - start
    assert elapsed < 300.0
    _report("criterion 8 (determinism)",
            f"{len(compared)} artifacts bitwise identical across reruns "
            f"(timestamps only in manifest), {elapsed:.0f}s")


def test_c9_signal_conditioning():
    start = time.time()
    gain_cut = steady_state_gain(fs=200.0, cutoff=2.0, freq=2.0)
    db_cut = 20 * math.log10(gain_cut)
    assert abs(db_cut - (-3.01)) <= 0.1, f"cutoff gain {db_cut:.3f} dB"

    gain_4x = steady_state_gain(fs=200.0, cutoff=2.0, freq=8.0)
    db_4x = 20 * math.log10(gain_4x)
    db_formula = 20 * math.log10(analytic_gain(4.0))
    assert abs(db_4x - db_formula) <= 2.0, f"{db_4x:.2f} vs analytic {db_formula:.2f}"

    rng = rng_derive(0, 0)
    train = [rng.normal(size=(3000, 4)) * 3.0 + 7.0]
    stats = zscore_fit(train)
    z = zscore_apply(train[0], stats)
    assert np.all(np.abs(z.mean(axis=0)) <= 1e-6)
    assert np.all(np.abs(z.std(axis=0) - 1.0) <= 1e-6)

    checked = 0
    for _ in range(100):
        t = int(rng.integers(8, 200))
        n = int(rng.integers(t, 4000))
        rec = RawRecording(np.zeros((n, 1), dtype=np.float32), 50.0, "s",
                           np.zeros(n, dtype=np.int64))
        stride = int(round(t * 0.5))
        assert len(sliding_windows(rec, t)) == (n - t) // stride + 1
        checked += 1
    elapsed = time.time() - start
    assert elapsed < 30.0
    _report("criterion 9 (signal conditioning)",
            f"cutoff {db_cut:.2f} dB, 4x cutoff {db_4x:.2f} dB vs {db_formula:.2f} dB, "
            f"z-score exact, window formula on {checked} random cases, {elapsed:.1f}s")
