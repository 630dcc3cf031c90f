"""Figure rendering for the CLI report path.

Every function writes one PNG next to the JSON/CSV outputs. Dates are
stripped from the PNG metadata so repeated runs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = dict(dpi=120, metadata={"Date": None})


def _finish(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_history_figure(histories: list[list[dict]], path: str | Path) -> None:
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(9, 3.5))
    for i, hist in enumerate(histories):
        epochs = [row["epoch"] for row in hist]
        ax_loss.plot(epochs, [row["trainLoss"] for row in hist], label=f"seed {i}")
        ax_f1.plot(epochs, [row["valMacroF1"] for row in hist], label=f"seed {i}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation macro F1")
    ax_f1.set_ylim(0, 1.02)
    ax_f1.legend(fontsize=7)
    _finish(fig, path)


def save_confusion_figure(cm: np.ndarray, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(cm, cmap="Blues")
    for (r, c), v in np.ndenumerate(cm):
        ax.text(c, r, str(int(v)), ha="center", va="center", fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, shrink=0.8)
    _finish(fig, path)


def save_cost_figure(report: dict, path: str | Path) -> None:
    blocks = list(report["macsByBlock"])
    fig, (ax_p, ax_m) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_p.bar(blocks, [report["paramsByBlock"].get(b, 0) for b in blocks], color="#4878d0")
    ax_p.set_ylabel("parameters")
    ax_m.bar(blocks, [report["macsByBlock"][b] for b in blocks], color="#ee854a")
    ax_m.set_ylabel("MACs / window")
    for ax in (ax_p, ax_m):
        ax.tick_params(axis="x", rotation=30)
    _finish(fig, path)


def save_ablation_figure(suite: dict[str, dict], path: str | Path) -> None:
    variants = list(suite)
    means = [suite[v]["meanF1"] * 100 for v in variants]
    stds = [suite[v]["stdF1"] * 100 for v in variants]
    macs = [suite[v]["costVsBase"]["macsRatio"] for v in variants]
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    ax.bar(variants, means, yerr=stds, capsize=4, color="#4878d0")
    ax.set_ylabel("macro F1 (%)")
    ax.set_ylim(0, 105)
    for x, (m, r) in enumerate(zip(means, macs)):
        ax.text(x, m + 2, f"{r:.2f}x MACs", ha="center", fontsize=7)
    _finish(fig, path)


def save_robustness_figure(results: dict[str, dict], path: str | Path) -> None:
    kinds = list(results)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(kinds, [results[k]["macroF1"] * 100 for k in kinds], color="#6acc64")
    ax.set_ylabel("macro F1 (%)")
    ax.set_ylim(0, 105)
    for x, k in enumerate(kinds):
        ax.text(x, results[k]["macroF1"] * 100 + 2,
                f"-{results[k]['deltaPct']:.2f} pts", ha="center", fontsize=8)
    _finish(fig, path)


def save_quantization_figure(report: dict, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar(["fp32", "int8"], [report["fp32F1"] * 100, report["int8F1"] * 100],
           color=["#4878d0", "#ee854a"])
    ax.set_ylabel("macro F1 (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"degradation {report['deltaPct']:.2f} pts, "
                 f"argmax agreement {report['argmaxAgreement'] * 100:.1f}%", fontsize=9)
    _finish(fig, path)


def save_hpo_figure(records: list[dict], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter([r["lr_max"] for r in records], [r["valMacroF1"] for r in records],
               c=[r["dropout_rate"] for r in records], cmap="viridis")
    ax.set_xscale("log")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("validation macro F1")
    _finish(fig, path)
