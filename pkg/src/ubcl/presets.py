"""Dataset presets and bundled reference constants.

Presets carry only benchmark dimensions (channels, window length, classes,
sampling rate, low-pass cutoff where one is conventional). No data ships
with them; training on the real benchmarks requires user-supplied CSVs.

The REF_* constants are previously reported results for this architecture
and three baseline models on the same benchmarks, used purely for side by
side rendering in reports. They are never asserted as reproduced.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    channels: int
    window_len: int
    num_classes: int
    sample_rate_hz: float
    cutoff_hz: float | None = None

    def model_config(self, **overrides) -> ModelConfig:
        base = dict(channels=self.channels, window_len=self.window_len,
                    num_classes=self.num_classes)
        base.update(overrides)
        return ModelConfig(**base)


PRESETS: dict[str, DatasetPreset] = {
    "uci-har": DatasetPreset("uci-har", 9, 128, 6, 50.0),
    "motionsense": DatasetPreset("motionsense", 6, 128, 6, 50.0),
    "wisdm": DatasetPreset("wisdm", 3, 128, 6, 20.0),
    "pamap2": DatasetPreset("pamap2", 19, 128, 12, 100.0, cutoff_hz=10.0),
    "opportunity": DatasetPreset("opportunity", 79, 128, 5, 30.0),
    "unimib": DatasetPreset("unimib", 3, 128, 9, 50.0),
    "skoda": DatasetPreset("skoda", 30, 98, 11, 98.0, cutoff_hz=5.0),
    "daphnet": DatasetPreset("daphnet", 9, 64, 2, 64.0, cutoff_hz=12.0),
}

# Reference MAC totals (thousands) and INT8 footprints (KB) per preset.
REF_MACS_K: dict[str, float] = {
    "uci-har": 420, "motionsense": 389, "wisdm": 359, "pamap2": 523,
    "opportunity": 1140, "unimib": 359, "skoda": 444, "daphnet": 245,
}
REF_FOOTPRINT_KB: dict[str, float] = {
    "uci-har": 21.2, "motionsense": 20.7, "wisdm": 20.2, "pamap2": 23.4,
    "opportunity": 32.4, "unimib": 20.5, "skoda": 25.1, "daphnet": 20.8,
}

# Reference macro-F1 (%) mean and std per preset: this model and baselines.
REF_F1: dict[str, dict[str, tuple[float, float]]] = {
    "uci-har": {"ubcl": (93.41, 0.35), "deepconvlstm": (93.61, 0.56),
                "tinyhar": (96.53, 0.41), "tinierhar": (96.37, 0.59)},
    "motionsense": {"ubcl": (91.65, 0.43), "deepconvlstm": (91.64, 0.75),
                    "tinyhar": (92.67, 0.67), "tinierhar": (91.99, 0.60)},
    "wisdm": {"ubcl": (73.17, 12.4), "deepconvlstm": (81.25, 2.55),
              "tinyhar": (77.09, 4.95), "tinierhar": (83.06, 3.24)},
    "pamap2": {"ubcl": (60.75, 1.76), "deepconvlstm": (66.20, 2.72),
               "tinyhar": (73.22, 3.58), "tinierhar": (74.07, 1.16)},
    "opportunity": {"ubcl": (87.58, 0.73), "deepconvlstm": (87.21, 0.63),
                    "tinyhar": (88.69, 0.38), "tinierhar": (87.09, 0.90)},
    "unimib": {"ubcl": (79.43, 1.66), "deepconvlstm": (84.12, 2.23),
               "tinyhar": (77.61, 2.23), "tinierhar": (79.67, 4.45)},
    "skoda": {"ubcl": (94.46, 1.31), "deepconvlstm": (95.25, 1.03),
              "tinyhar": (97.01, 0.53), "tinierhar": (96.99, 0.76)},
    "daphnet": {"ubcl": (88.98, 1.64), "deepconvlstm": (88.19, 1.89),
                "tinyhar": (86.42, 3.64), "tinierhar": (89.84, 1.90)},
}

# Reference FP32 vs INT8 macro-F1 per preset (no unimib row was reported).
REF_QUANT_F1: dict[str, tuple[float, float]] = {
    "uci-har": (0.9269, 0.9269), "motionsense": (0.9088, 0.9046),
    "wisdm": (0.7684, 0.7682), "pamap2": (0.6373, 0.6379),
    "opportunity": (0.8703, 0.8709), "skoda": (0.9571, 0.9564),
    "daphnet": (0.8813, 0.8705),
}

# Reference efficiency summary over all presets (params, MACs, F1 ratios).
REF_EFFICIENCY: dict[str, dict[str, float]] = {
    "ubcl": {"params_k": 11.4, "macs_k": 485, "f1": 83.68,
             "f1_per_k_params": 7.34, "f1_per_m_macs": 172.5},
    "deepconvlstm": {"params_k": 135.6, "macs_k": 15510, "f1": 85.93,
                     "f1_per_k_params": 0.63, "f1_per_m_macs": 5.54},
    "tinyhar": {"params_k": 55.1, "macs_k": 9290, "f1": 86.16,
                "f1_per_k_params": 1.56, "f1_per_m_macs": 9.27},
    "tinierhar": {"params_k": 33.5, "macs_k": 1730, "f1": 87.39,
                  "f1_per_k_params": 2.61, "f1_per_m_macs": 50.5},
}

BASELINE_NAMES = ["deepconvlstm", "tinyhar", "tinierhar"]


def preset_names() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> DatasetPreset:
    if name not in PRESETS:
        raise KeyError(f"unknown preset '{name}'; choose from {', '.join(PRESETS)}")
    return PRESETS[name]
