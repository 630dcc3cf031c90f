"""Metrics, multi-seed experiment harness, perturbations, and suites.

Per-seed runs derive every random choice (validation subjects, init,
shuffling, dropout) from one child stream of the master seed, so a report
is a pure function of (config, train config, data, master seed). Seed
spread is summarized with the population standard deviation.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .analysis import CostReport, cost_report
from .datapipe import DataBundle, WindowedDataset, subject_split
from .model import ModelConfig, Variant, predict_batch
from .numerics import rng_derive
from .training import TrainConfig, fit
from . import presets


def confusion_matrix(true_labels, pred_labels, num_classes: int) -> np.ndarray:
    """num_classes x num_classes counts, rows true, columns predicted."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"label arrays differ in length: {t.shape} vs {p.shape}")
    return np.bincount(t * num_classes + p, minlength=num_classes * num_classes
                       ).reshape(num_classes, num_classes)


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1; absent classes score 0."""
    if cm.sum() == 0:
        raise ValueError("confusion matrix holds no samples")
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=(tp + fn) > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def evaluate(config: ModelConfig, weights, dataset: WindowedDataset):
    """Eval-mode pass over a dataset; returns (macro F1, confusion matrix)."""
    preds = predict_batch(config, weights, dataset.windows)
    cm = confusion_matrix(dataset.labels, preds, config.num_classes)
    return macro_f1(cm), cm


def perturb_jitter(window: np.ndarray) -> np.ndarray:
    """Drop every 5th sample, then restore length by linear interpolation."""
    t = window.shape[0]
    if t < 5:
        raise ValueError("jitter needs at least 5 timesteps")
    pos = np.arange(t)
    kept = pos[pos % 5 != 4]
    out = np.empty_like(window)
    for c in range(window.shape[1]):
        out[:, c] = np.interp(pos, kept, window[kept, c])
    return out


def perturb_channel_dropout(window: np.ndarray, channels: set[int]) -> np.ndarray:
    """Zero the listed channels (post-normalization); others untouched."""
    bad = [c for c in channels if not 0 <= c < window.shape[1]]
    if bad:
        raise ValueError(f"channel indices out of range: {bad}")
    out = window.copy()
    out[:, sorted(channels)] = 0.0
    return out


@dataclass
class ExperimentReport:
    per_seed: list[dict]
    mean_f1: float
    std_f1: float
    cost: CostReport
    variant: str
    perturbation: str | None = None

    def to_dict(self) -> dict:
        return {
            "schemaVersion": 1,
            "perSeed": self.per_seed,
            "meanF1": self.mean_f1,
            "stdF1": self.std_f1,  # population standard deviation
            "cost": self.cost.to_dict(),
            "variant": self.variant,
            "perturbation": self.perturbation,
        }


def split_train_val(train: WindowedDataset, rng):
    """Hold out whole subjects for validation; windows only as a last resort."""
    subjects = sorted(train.subject_set())
    if len(subjects) >= 2:
        n_val = max(1, len(subjects) // 4)
        pick = rng.permutation(len(subjects))[:n_val]
        val_subjects = {subjects[i] for i in pick}
        return subject_split(train, val_subjects)
    perm = rng.permutation(len(train))
    cut = max(1, len(train) // 5)
    return train.select(perm[cut:]), train.select(perm[:cut])


def run_single_seed(config: ModelConfig, train_config: TrainConfig,
                    bundle: DataBundle, seed_index: int) -> dict:
    """One fit/evaluate cycle driven entirely by child stream `seed_index`."""
    rng = rng_derive(train_config.master_seed, seed_index)
    fit_train, fit_val = split_train_val(bundle.train, rng)
    weights, history = fit(config, train_config, fit_train, fit_val, rng=rng)
    f1, cm = evaluate(config, weights, bundle.test)
    best_val = max(row["valMacroF1"] for row in history)
    return {"seed": seed_index, "macroF1": f1, "confusion": cm,
            "history": history, "weights": weights, "valMacroF1": best_val}


def _seed_worker(args):
    return run_single_seed(*args)


def multi_seed_run(config: ModelConfig, train_config: TrainConfig, bundle: DataBundle,
                   jobs: int = 1):
    """Train/evaluate across num_seeds child streams of the master seed.

    Returns (ExperimentReport, per-seed artifacts). Artifact i carries the
    trained weights and history of seed i; the report itself is pure data.
    """
    n = train_config.num_seeds
    if n < 1:
        raise ValueError("num_seeds must be >= 1")
    tasks = [(config, train_config, bundle, i) for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            artifacts = list(pool.map(_seed_worker, tasks))
    else:
        artifacts = [run_single_seed(*t) for t in tasks]

    f1s = np.array([a["macroF1"] for a in artifacts])
    per_seed = [{"seed": a["seed"], "macroF1": a["macroF1"],
                 "confusion": a["confusion"].tolist()} for a in artifacts]
    report = ExperimentReport(
        per_seed=per_seed,
        mean_f1=float(f1s.mean()),
        std_f1=float(f1s.std()),
        cost=cost_report(config),
        variant=config.variant.value,
    )
    return report, artifacts


def best_artifact(artifacts: list[dict]) -> dict:
    """Highest validation F1; ties go to the lowest seed index."""
    return max(artifacts, key=lambda a: (a["valMacroF1"], -a["seed"]))


def ablation_suite(base_config: ModelConfig, train_config: TrainConfig,
                   bundle: DataBundle, jobs: int = 1) -> dict[str, dict]:
    """Train every structural variant with the identical seed protocol."""
    base_cost = cost_report(replace(base_config, variant=Variant.BASE))
    out: dict[str, dict] = {}
    for variant in Variant:
        config = replace(base_config, variant=variant)
        report, _ = multi_seed_run(config, train_config, bundle, jobs=jobs)
        entry = report.to_dict()
        entry["costVsBase"] = {
            "paramsRatio": report.cost.total_params / base_cost.total_params,
            "macsRatio": report.cost.total_macs / base_cost.total_macs,
        }
        out[variant.value] = entry
    return out


def apply_perturbation(dataset: WindowedDataset, kind: str,
                       drop_channels: set[int] | None = None) -> WindowedDataset:
    if kind == "clean":
        return dataset
    if kind == "jitter":
        windows = np.stack([perturb_jitter(w) for w in dataset.windows])
    elif kind == "channel-dropout":
        channels = set(range(dataset.windows.shape[2])) if drop_channels is None else drop_channels
        windows = np.stack([perturb_channel_dropout(w, channels) for w in dataset.windows])
    else:
        raise ValueError(f"unknown perturbation '{kind}'")
    return WindowedDataset(windows, dataset.labels, dataset.subjects, dataset.norm_stats)


def robustness_suite(config: ModelConfig, weights, test_set: WindowedDataset,
                     drop_channels: set[int] | None = None) -> dict[str, dict]:
    """Clean vs jitter vs channel-dropout evaluation of trained weights.

    Channel dropout zeroes `drop_channels` (every channel when None).
    Deltas are absolute percentage points below the clean score.
    """
    clean_f1, _ = evaluate(config, weights, test_set)
    out = {}
    for kind in ("clean", "jitter", "channel-dropout"):
        perturbed = apply_perturbation(test_set, kind, drop_channels)
        f1, _ = evaluate(config, weights, perturbed)
        out[kind] = {"macroF1": f1, "deltaPct": (clean_f1 - f1) * 100.0}
    return out


def render_f1_table(report_by_name: dict[str, dict]) -> str:
    """Measured mean +/- std beside the bundled reference scores."""
    lines = ["Macro F1 (%)", "============",
             f"{'dataset':<14}{'measured':>16}{'ref':>10}"
             + "".join(f"{b:>14}" for b in presets.BASELINE_NAMES)]
    for name, rep in report_by_name.items():
        measured = f"{rep['meanF1'] * 100:.2f}+/-{rep['stdF1'] * 100:.2f}"
        refs = presets.REF_F1.get(name, {})
        own = refs.get("ubcl")
        own_s = f"{own[0]:.2f}" if own else "-"
        row = f"{name:<14}{measured:>16}{own_s:>10}"
        for b in presets.BASELINE_NAMES:
            val = refs.get(b)
            row += f"{val[0]:>14.2f}" if val else f"{'-':>14}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def report_csv_rows(report: dict) -> list[list]:
    """Flatten an experiment report for spreadsheet import."""
    rows = [["seed", "macroF1", "variant", "meanF1", "stdF1", "totalParams", "totalMacs"]]
    for entry in report["perSeed"]:
        rows.append([entry["seed"], f"{entry['macroF1']:.6f}", report["variant"],
                     f"{report['meanF1']:.6f}", f"{report['stdF1']:.6f}",
                     report["cost"]["totalParams"], report["cost"]["totalMacs"]])
    return rows
