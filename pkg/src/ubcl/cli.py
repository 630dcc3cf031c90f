"""Command-line entry point.

Subcommands: analyze, train, quantize, ablate, robustness, hpo. Every
command resolves its full configuration up front, writes all artifacts
(JSON report, CSV flattening, text table, PNG figures, run manifest) into
the --out directory, and is bitwise reproducible from its manifest aside
from the manifest timestamp.

Exit codes: 0 success, 2 usage/config, 3 data, 4 model file, 5 internal.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, figures, presets
from .container import ModelFileError, load_model, load_quantized, save_model, save_quantized
from .datapipe import (CsvSchema, DataError, SynthSpec, csv_pipeline, default_synth_spec,
                       default_test_subjects, load_csv, split_and_normalize, synth_generate)
from .evalkit import (ablation_suite, best_artifact, multi_seed_run, render_f1_table,
                      report_csv_rows, robustness_suite, split_train_val)
from .model import ModelConfig, Variant
from .numerics import rng_derive
from .quantization import (calibrate, degradation_report, quantize_model,
                           quantized_model_from_container, quantized_model_to_extra,
                           select_calibration)
from .training import TrainConfig, random_search

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_INTERNAL = 5

HPO_SPLIT_STREAM = 20_000
DEFAULT_MASTER_SEED = 42


class UsageError(Exception):
    pass


def _default_seed() -> int:
    return int(os.environ.get("UBCL_MASTER_SEED", DEFAULT_MASTER_SEED))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="dataset preset name (see `analyze --preset help`)")
    p.add_argument("--channels", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="a0")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--synthetic", metavar="SPEC",
                   help="'default' or a JSON file with a synthetic task spec")
    p.add_argument("--csv", metavar="PATH")
    p.add_argument("--label-col", default="label")
    p.add_argument("--subject-col", default="subject")
    p.add_argument("--channel-cols", help="comma-separated channel column names")
    p.add_argument("--rate", type=float, help="sample rate in Hz for --csv input")
    p.add_argument("--cutoff-hz", type=float, help="low-pass cutoff; default from preset")
    p.add_argument("--test-subjects", help="comma-separated held-out subject ids")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--no-class-weights", action="store_true",
                   help="disable inverse-frequency class weighting")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help=f"master seed (env UBCL_MASTER_SEED, default {DEFAULT_MASTER_SEED})")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed/trial workers")
    p.add_argument("--out", default="ubcl-out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ubcl")
    parser.add_argument("--version", action="version", version=f"ubcl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="closed-form parameter/MAC/footprint analysis")
    _add_config_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="multi-seed training run")
    _add_config_flags(p)
    _add_data_flags(p)
    _add_train_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="INT8 post-training quantization of a model file")
    p.add_argument("--model", required=True, help="UBCL float32 model file")
    p.add_argument("--preset", help="preset name, for reference constants in the report")
    _add_data_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("ablate", help="train and evaluate all structural variants")
    _add_config_flags(p)
    _add_data_flags(p)
    _add_train_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robustness", help="clean vs perturbed evaluation")
    p.add_argument("--model", help="evaluate this model file instead of training")
    p.add_argument("--drop-channels", help="comma-separated channel indices (default: all)")
    _add_config_flags(p)
    _add_data_flags(p)
    _add_train_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("hpo", help="random search over lr / weight decay / dropout")
    p.add_argument("--trials", type=int, default=10)
    _add_config_flags(p)
    _add_data_flags(p)
    _add_train_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_hpo)
    return parser


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _write_manifest(out: Path, command: str, seed: int, config: dict,
                    input_paths: list[str]) -> None:
    manifest = {
        "command": command,
        "toolVersion": __version__,
        "masterSeed": seed,
        "config": config,
        "inputDigests": {p: _sha256(p) for p in input_paths},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    _write_json(out / "manifest.json", manifest)


def _resolve_model_config(args, dims: tuple[int, int, int] | None = None):
    """Model config from preset, explicit flags, or dataset dimensions."""
    dropout = getattr(args, "dropout", 0.0)
    variant = Variant(args.variant)
    if args.preset:
        preset = presets.get_preset(args.preset)
        if dims and (preset.channels, preset.window_len, preset.num_classes) != dims:
            raise UsageError(
                f"preset '{args.preset}' dimensions {preset.channels}x{preset.window_len}"
                f"/{preset.num_classes} do not match the dataset {dims}")
        return preset.model_config(variant=variant, dropout_rate=dropout), preset.name
    if dims:
        c, t, k = dims
        return ModelConfig(c, t, k, variant=variant, dropout_rate=dropout), None
    if args.channels and args.window and args.classes:
        return ModelConfig(args.channels, args.window, args.classes,
                           variant=variant, dropout_rate=dropout), None
    raise UsageError("provide --preset, or --channels/--window/--classes, or a dataset")


def _load_bundle(args, seed: int):
    """Returns (bundle, data description, (channels, window, classes), input paths)."""
    if args.synthetic and args.csv:
        raise UsageError("--synthetic and --csv are mutually exclusive")
    if args.synthetic:
        inputs = []
        if args.synthetic == "default":
            spec = default_synth_spec()
        else:
            try:
                spec = SynthSpec.from_dict(json.loads(Path(args.synthetic).read_text()))
            except OSError as exc:
                raise DataError(f"cannot read synthetic spec: {exc}") from None
            inputs.append(args.synthetic)
        dataset = synth_generate(spec, seed=seed)
        if args.test_subjects:
            test_subjects = set(args.test_subjects.split(","))
        else:
            test_subjects = default_test_subjects(dataset)
        bundle = split_and_normalize(dataset, test_subjects)
        desc = {"type": "synthetic", "spec": spec.to_dict(),
                "testSubjects": sorted(test_subjects), "generatorSeed": seed}
        dims = (spec.channels, spec.window_len, spec.num_classes)
        return bundle, desc, dims, inputs
    if args.csv:
        if args.rate is None:
            raise UsageError("--csv requires --rate")
        if args.channel_cols:
            channel_cols = args.channel_cols.split(",")
        else:
            try:
                with open(args.csv, newline="") as fh:
                    header = next(csv.reader(fh), None)
            except OSError as exc:
                raise DataError(f"cannot open {args.csv}: {exc}") from None
            if not header:
                raise DataError(f"{args.csv}: empty file")
            channel_cols = [c for c in header if c not in (args.label_col, args.subject_col)]
        schema = CsvSchema(channel_cols, args.label_col, args.subject_col, args.rate)
        recordings = load_csv(args.csv, schema)
        window = args.window or (presets.get_preset(args.preset).window_len if args.preset else None)
        if not window:
            raise UsageError("--csv requires --window (or a --preset providing it)")
        cutoff = args.cutoff_hz
        if cutoff is None and args.preset:
            cutoff = presets.get_preset(args.preset).cutoff_hz
        subjects = sorted({r.subject_id for r in recordings})
        if args.test_subjects:
            test_subjects = set(args.test_subjects.split(","))
        else:
            test_subjects = set(subjects[-max(1, len(subjects) // 4):])
        bundle = csv_pipeline(recordings, window, test_subjects, cutoff_hz=cutoff)
        classes = args.classes or int(max(r.labels.max() for r in recordings)) + 1
        desc = {"type": "csv", "path": args.csv, "channelCols": channel_cols,
                "labelCol": args.label_col, "subjectCol": args.subject_col,
                "rateHz": args.rate, "cutoffHz": cutoff, "windowLen": window,
                "testSubjects": sorted(test_subjects)}
        return bundle, desc, (len(channel_cols), window, classes), [args.csv]
    raise UsageError("provide a dataset via --synthetic or --csv")


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        lr_max=args.lr, weight_decay=args.weight_decay, batch_size=args.batch,
        dropout_rate=args.dropout, max_epochs=args.epochs, patience=args.patience,
        class_weighting=not args.no_class_weights, master_seed=seed, num_seeds=args.seeds)


def cmd_analyze(args) -> int:
    out = _prepare_out(args)
    seed = args.seed if args.seed is not None else _default_seed()
    config, preset_name = _resolve_model_config(args)
    report = analysis.cost_report(config)
    rep_dict = report.to_dict()
    note = analysis.mac_deviation_note(preset_name, report.total_macs) if preset_name else None
    if note:
        rep_dict["deviationNote"] = note
    table = analysis.render_cost_table(preset_name, report)
    _write_json(out / "cost_report.json", rep_dict)
    (out / "cost_table.txt").write_text(table)
    rows = [["block", "params", "macs"]]
    for name in report.macs_by_block:
        rows.append([name, report.params_by_block.get(name, 0), report.macs_by_block[name]])
    rows.append(["total", report.total_params, report.total_macs])
    _write_csv(out / "cost_report.csv", rows)
    figures.save_cost_figure(rep_dict, out / "cost_figure.png")
    _write_manifest(out, "analyze", seed, {"model": config.to_dict(), "preset": preset_name}, [])
    sys.stdout.write(table)
    return EXIT_OK


def cmd_train(args) -> int:
    out = _prepare_out(args)
    seed = args.seed if args.seed is not None else _default_seed()
    bundle, data_desc, dims, inputs = _load_bundle(args, seed)
    config, preset_name = _resolve_model_config(args, dims)
    tc = _train_config(args, seed)

    report, artifacts = multi_seed_run(config, tc, bundle, jobs=args.jobs)
    best = best_artifact(artifacts)

    save_model(out / "model.ubcl", config, best["weights"],
               extra={"bestSeed": best["seed"], "data": data_desc})
    for art in artifacts:
        with open(out / f"history_seed{art['seed']}.jsonl", "w") as fh:
            for row in art["history"]:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    rep_dict = report.to_dict()
    rep_dict["efficiency"] = analysis.efficiency_metrics(
        report.mean_f1, report.cost.total_params, report.cost.total_macs)
    _write_json(out / "report.json", rep_dict)
    _write_csv(out / "report.csv", report_csv_rows(rep_dict))
    table = render_f1_table({preset_name or data_desc["type"]: rep_dict})
    (out / "f1_table.txt").write_text(table)
    figures.save_history_figure([a["history"] for a in artifacts], out / "history.png")
    figures.save_confusion_figure(np.array(best["confusion"]), out / "confusion.png")
    _write_manifest(out, "train", seed,
                    {"model": config.to_dict(), "train": tc.to_dict(), "data": data_desc},
                    inputs)
    print(f"mean macro F1 {report.mean_f1:.4f} +/- {report.std_f1:.4f} "
          f"over {tc.num_seeds} seeds (best seed {best['seed']})")
    return EXIT_OK


def cmd_quantize(args) -> int:
    out = _prepare_out(args)
    seed = args.seed if args.seed is not None else _default_seed()
    config, weights, _ = load_model(args.model)
    bundle, data_desc, dims, inputs = _load_bundle(args, seed)
    if dims[:2] != (config.channels, config.window_len):
        raise DataError(f"model expects [{config.window_len} x {config.channels}] windows, "
                        f"dataset provides [{dims[1]} x {dims[0]}]")

    calib = select_calibration(bundle.train.windows, seed)
    ranges = calibrate(config, weights, calib)
    qm = quantize_model(config, weights, ranges)
    save_quantized(out / "model_int8.ubcl", config, qm.weight_q, qm.weight_params,
                   quantized_model_to_extra(qm))

    deg = degradation_report(config, weights, qm, bundle.test)
    rep = dict(deg)
    rep["calibrationSamples"] = int(len(calib))
    preset_ref = presets.REF_QUANT_F1.get(args.preset) if args.preset else None
    if preset_ref:
        rep["reference"] = {"fp32F1": preset_ref[0], "int8F1": preset_ref[1],
                            "deltaPct": (preset_ref[0] - preset_ref[1]) * 100.0}
    _write_json(out / "quantization.json", rep)
    _write_csv(out / "quantization.csv",
               [["metric", "value"]] + [[k, v] for k, v in deg.items()])
    lines = ["INT8 quantization impact", "========================",
             f"fp32 macro F1:    {deg['fp32F1']:.4f}",
             f"int8 macro F1:    {deg['int8F1']:.4f}",
             f"degradation:      {deg['deltaPct']:.2f} points",
             f"argmax agreement: {deg['argmaxAgreement'] * 100:.1f}%"]
    if preset_ref:
        lines.append(f"reference:        {preset_ref[0]:.4f} -> {preset_ref[1]:.4f}")
    (out / "quantization.txt").write_text("\n".join(lines) + "\n")
    figures.save_quantization_figure(deg, out / "quantization.png")
    _write_manifest(out, "quantize", seed,
                    {"model": config.to_dict(), "modelFile": args.model, "data": data_desc},
                    [args.model, *inputs])
    print(f"fp32 {deg['fp32F1']:.4f} -> int8 {deg['int8F1']:.4f} "
          f"({deg['deltaPct']:.2f} pts, agreement {deg['argmaxAgreement'] * 100:.1f}%)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    out = _prepare_out(args)
    seed = args.seed if args.seed is not None else _default_seed()
    bundle, data_desc, dims, inputs = _load_bundle(args, seed)
    config, _ = _resolve_model_config(args, dims)
    tc = _train_config(args, seed)
    suite = ablation_suite(config, tc, bundle, jobs=args.jobs)
    _write_json(out / "ablation.json", suite)
    rows = [["variant", "meanF1", "stdF1", "totalParams", "totalMacs", "macsRatioVsBase"]]
    for v, rep in suite.items():
        rows.append([v, f"{rep['meanF1']:.6f}", f"{rep['stdF1']:.6f}",
                     rep["cost"]["totalParams"], rep["cost"]["totalMacs"],
                     f"{rep['costVsBase']['macsRatio']:.4f}"])
    _write_csv(out / "ablation.csv", rows)
    figures.save_ablation_figure(suite, out / "ablation.png")
    _write_manifest(out, "ablate", seed,
                    {"model": config.to_dict(), "train": tc.to_dict(), "data": data_desc},
                    inputs)
    for v, rep in suite.items():
        print(f"{v}: F1 {rep['meanF1']:.4f} +/- {rep['stdF1']:.4f} "
              f"({rep['costVsBase']['macsRatio']:.2f}x MACs)")
    return EXIT_OK


def cmd_robustness(args) -> int:
    out = _prepare_out(args)
    seed = args.seed if args.seed is not None else _default_seed()
    bundle, data_desc, dims, inputs = _load_bundle(args, seed)
    if args.model:
        config, weights, _ = load_model(args.model)
        inputs = [args.model, *inputs]
    else:
        config, _ = _resolve_model_config(args, dims)
        tc = _train_config(args, seed)
        _, artifacts = multi_seed_run(config, tc, bundle, jobs=args.jobs)
        weights = best_artifact(artifacts)["weights"]
    drop = set(int(c) for c in args.drop_channels.split(",")) if args.drop_channels else None
    results = robustness_suite(config, weights, bundle.test, drop_channels=drop)
    _write_json(out / "robustness.json", results)
    rows = [["perturbation", "macroF1", "deltaPct"]]
    for kind, entry in results.items():
        rows.append([kind, f"{entry['macroF1']:.6f}", f"{entry['deltaPct']:.4f}"])
    _write_csv(out / "robustness.csv", rows)
    figures.save_robustness_figure(results, out / "robustness.png")
    _write_manifest(out, "robustness", seed,
                    {"model": config.to_dict(), "data": data_desc,
                     "dropChannels": sorted(drop) if drop else "all"}, inputs)
    for kind, entry in results.items():
        print(f"{kind}: F1 {entry['macroF1']:.4f} (delta {entry['deltaPct']:.2f} pts)")
    return EXIT_OK


def cmd_hpo(args) -> int:
    out = _prepare_out(args)
    seed = args.seed if args.seed is not None else _default_seed()
    bundle, data_desc, dims, inputs = _load_bundle(args, seed)
    config, _ = _resolve_model_config(args, dims)
    tc = _train_config(args, seed)
    train, val = split_train_val(bundle.train, rng_derive(seed, HPO_SPLIT_STREAM))
    best, records = random_search(config, tc, train, val, trials=args.trials,
                                  rng=rng_derive(seed, HPO_SPLIT_STREAM + 1))
    payload = {"best": best.to_dict(), "trials": records}
    _write_json(out / "hpo.json", payload)
    rows = [["trial", "lr_max", "weight_decay", "dropout_rate", "valMacroF1"]]
    for r in records:
        rows.append([r["trial"], f"{r['lr_max']:.6g}", f"{r['weight_decay']:.6g}",
                     f"{r['dropout_rate']:.4f}", f"{r['valMacroF1']:.6f}"])
    _write_csv(out / "hpo.csv", rows)
    figures.save_hpo_figure(records, out / "hpo.png")
    _write_manifest(out, "hpo", seed,
                    {"model": config.to_dict(), "train": tc.to_dict(),
                     "data": data_desc, "trials": args.trials}, inputs)
    print(f"best: lr {best.lr_max:.5f}, weight decay {best.weight_decay:.6f}, "
          f"dropout {best.dropout_rate:.3f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        # unknown preset: list the valid names
        if "preset" in str(exc):
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_USAGE
        traceback.print_exc()
        return EXIT_INTERNAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelFileError as exc:
        print(f"model file error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
