"""Closed-form cost analysis: parameters, MACs, receptive field, footprint.

Conventions:
  * Parameter counts cover learnable scalars only (batch-norm running
    statistics are excluded, though they ship in the model container).
  * MACs count multiply-accumulates; pooling, batch norm and activations
    are free. Convolutions are same-padded, so each output position costs
    a full kernel.
  * The recurrent layer is counted under the two-bias convention,
    dirs * (4H*(F+H) + 8H). The single-bias closed form
    dirs * 4H * (F+H+1) is reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig, tensor_order
from . import presets

CONTAINER_HEADER_BYTES = 256
QUANT_PARAM_BYTES = 8  # one scale + zero-point record per tensor
MAC_TOLERANCE_TIGHT = 0.01   # presets whose reference MACs the closed form matches
MAC_TOLERANCE_LOOSE = 0.20   # presets with a documented deviation
LOOSE_MAC_PRESETS = ("skoda", "daphnet")


@dataclass
class CostReport:
    params_by_block: dict[str, int]
    total_params: int
    lstm_params_single_bias: int
    total_params_single_bias: int
    macs_by_block: dict[str, int]
    total_macs: int
    receptive_field_no_stride: int
    receptive_field_with_stride: int
    int8_footprint_kb: float

    def to_dict(self) -> dict:
        return {
            "paramsByBlock": self.params_by_block,
            "totalParams": self.total_params,
            "lstmParamsSingleBias": self.lstm_params_single_bias,
            "totalParamsSingleBias": self.total_params_single_bias,
            "macsByBlock": self.macs_by_block,
            "totalMacs": self.total_macs,
            "receptiveFieldNoStride": self.receptive_field_no_stride,
            "receptiveFieldWithStride": self.receptive_field_with_stride,
            "int8FootprintKB": self.int8_footprint_kb,
        }


def count_params(config: ModelConfig) -> dict[str, int]:
    """Learnable parameters per block (two-bias recurrent convention)."""
    c, f, k, h = config.channels, config.conv_filters, config.kernel, config.lstm_hidden
    dirs = 2 if config.variant.bidirectional else 1
    blocks = {"conv1": f * c * k + f, "bn1": 2 * f}
    if config.variant.num_conv_blocks == 2:
        blocks["conv2"] = f * f * k + f
        blocks["bn2"] = 2 * f
    blocks["lstm"] = dirs * (4 * h * (f + h) + 8 * h)
    blocks["head"] = config.head_width * config.num_classes + config.num_classes
    return blocks


def lstm_params_single_bias(config: ModelConfig) -> int:
    f, h = config.conv_filters, config.lstm_hidden
    dirs = 2 if config.variant.bidirectional else 1
    return dirs * 4 * h * (f + h + 1)


def count_macs(config: ModelConfig) -> dict[str, int]:
    """Multiply-accumulates per block for one window."""
    c, f, k, h = config.channels, config.conv_filters, config.kernel, config.lstm_hidden
    dirs = 2 if config.variant.bidirectional else 1
    seq = config.seq_lengths()
    blocks = {"conv1": f * c * k * config.window_len}
    if config.variant.num_conv_blocks == 2:
        blocks["conv2"] = f * f * k * seq[0]
    blocks["lstm"] = dirs * 4 * h * (f + h) * config.lstm_seq_len
    blocks["head"] = config.head_width * config.num_classes
    return blocks


def receptive_field(config: ModelConfig) -> tuple[int, int]:
    """(all strides treated as 1, pooling strides applied) in timesteps.

    R = 1 + sum_i (K_i - 1) * prod_{j<i} S_j over the conv layers, where
    S_j are the pooling strides between them.
    """
    k = config.kernel
    no_stride = 1
    with_stride = 1
    stride_prod = 1
    for _ in range(config.variant.num_conv_blocks):
        no_stride += k - 1
        with_stride += (k - 1) * stride_prod
        if config.variant.pools:
            stride_prod *= 2
    return no_stride, with_stride


def num_weight_tensors(config: ModelConfig) -> int:
    """Learnable tensors materialized by build_model (running stats excluded)."""
    return sum(1 for name, _ in tensor_order(config)
               if not name.endswith((".running_mean", ".running_var")))


def int8_footprint_kb(config: ModelConfig) -> float:
    """Deployment estimate: 1 byte/parameter + 8 bytes/tensor + 256 B header.

    This artifact's own formula; reference footprints are printed beside it
    in reports without any claim of equality.
    """
    total = sum(count_params(config).values())
    raw = total + QUANT_PARAM_BYTES * num_weight_tensors(config) + CONTAINER_HEADER_BYTES
    return raw / 1024.0


def cost_report(config: ModelConfig) -> CostReport:
    params = count_params(config)
    macs = count_macs(config)
    single = lstm_params_single_bias(config)
    rf_no, rf_with = receptive_field(config)
    return CostReport(
        params_by_block=params,
        total_params=sum(params.values()),
        lstm_params_single_bias=single,
        total_params_single_bias=sum(params.values()) - params["lstm"] + single,
        macs_by_block=macs,
        total_macs=sum(macs.values()),
        receptive_field_no_stride=rf_no,
        receptive_field_with_stride=rf_with,
        int8_footprint_kb=round(int8_footprint_kb(config), 3),
    )


def efficiency_metrics(mean_f1: float, total_params: int, total_macs: int) -> dict[str, float]:
    """F1 percent per thousand parameters and per million MACs."""
    if not 0.0 <= mean_f1 <= 1.0:
        raise ValueError("mean_f1 must lie in [0, 1]")
    if total_params <= 0 or total_macs <= 0:
        raise ValueError("params and MACs must be positive")
    f1_pct = mean_f1 * 100.0
    return {
        "f1_per_k_params": f1_pct / (total_params / 1000.0),
        "f1_per_m_macs": f1_pct / (total_macs / 1e6),
    }


def mac_deviation_note(preset_name: str, total_macs: int) -> str | None:
    """Deviation message when the closed form strays from the reference MACs."""
    ref = presets.REF_MACS_K.get(preset_name)
    if ref is None:
        return None
    rel = abs(total_macs - ref * 1000.0) / (ref * 1000.0)
    if preset_name in LOOSE_MAC_PRESETS and rel > MAC_TOLERANCE_TIGHT:
        return (f"{preset_name}: computed {total_macs} MACs deviates "
                f"{rel * 100:.1f}% from the reference {ref:.0f}K; the reference "
                f"count likely used different window dimensions (known deviation).")
    if rel > MAC_TOLERANCE_TIGHT:
        return (f"{preset_name}: computed {total_macs} MACs deviates "
                f"{rel * 100:.1f}% from the reference {ref:.0f}K.")
    return None


def render_cost_table(preset_name: str | None, report: CostReport) -> str:
    """Plain-text table of per-block costs plus reference columns."""
    lines = []
    title = f"Cost analysis ({preset_name})" if preset_name else "Cost analysis"
    lines.append(title)
    lines.append("=" * len(title))
    lines.append(f"{'block':<10}{'params':>10}{'MACs':>12}")
    for name in report.macs_by_block:
        lines.append(f"{name:<10}{report.params_by_block.get(name, 0):>10}"
                     f"{report.macs_by_block[name]:>12}")
    for name in report.params_by_block:
        if name not in report.macs_by_block:
            lines.append(f"{name:<10}{report.params_by_block[name]:>10}{0:>12}")
    lines.append(f"{'total':<10}{report.total_params:>10}{report.total_macs:>12}")
    lines.append("")
    lines.append(f"lstm params (single-bias form): {report.lstm_params_single_bias}"
                 f"  -> total {report.total_params_single_bias}")
    lines.append(f"receptive field: {report.receptive_field_no_stride} timesteps"
                 f" (unit strides), {report.receptive_field_with_stride} (with pooling strides)")
    lines.append(f"estimated INT8 footprint: {report.int8_footprint_kb:.2f} KB")
    if preset_name and preset_name in presets.REF_MACS_K:
        lines.append(f"reference MACs: {presets.REF_MACS_K[preset_name]:.0f}K"
                     f"   reference INT8 footprint: {presets.REF_FOOTPRINT_KB[preset_name]:.1f} KB")
        note = mac_deviation_note(preset_name, report.total_macs)
        if note:
            lines.append(f"note: {note}")
        ratio = report.int8_footprint_kb / presets.REF_FOOTPRINT_KB[preset_name]
        if abs(ratio - 1.0) > 0.25:
            lines.append(f"note: footprint formula gives {ratio:.2f}x the reference value; "
                         "the reference overhead model is unspecified, so no equality is claimed.")
    return "\n".join(lines) + "\n"
