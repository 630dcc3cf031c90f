"""UBCL model container: one binary format for float32 and int8 models.

Layout (all integers little-endian):

    magic        4 bytes  b"UBCL"
    version      u32      currently 1
    payload      u8       0 = float32 weights, 1 = int8 quantized weights
    meta_len     u32
    meta         UTF-8 JSON: {"config": {...}, "extra": {...}}
    tensor_count u32
    per tensor, in canonical order:
        name_len u16, name UTF-8
        rank     u8,  dims u32 * rank
        (int8 payloads only) scale f64, zero_point i32
        raw row-major values (f32 or i8)

A JSON sidecar with the same stem mirrors the meta block for human
inspection. Quantized containers keep float32 biases and activation
quantization records inside meta["extra"].
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelWeights, tensor_order

MAGIC = b"UBCL"
VERSION = 1
PAYLOAD_F32 = 0
PAYLOAD_INT8 = 1


class ModelFileError(ValueError):
    """Raised for unreadable, truncated or mismatched container files."""


def _write_header(fh, payload: int, meta: dict, tensor_count: int) -> None:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<IBI", VERSION, payload, len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", tensor_count))


def _write_name_dims(fh, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ModelFileError("truncated container file")
    return buf


def _read_header(fh):
    if _read_exact(fh, 4) != MAGIC:
        raise ModelFileError("bad magic: not a UBCL container")
    version, payload, meta_len = struct.unpack("<IBI", _read_exact(fh, 9))
    if version != VERSION:
        raise ModelFileError(f"unsupported container version {version}")
    try:
        meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt metadata block: {exc}") from None
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    return payload, meta, count


def _read_name_dims(fh):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    return name, dims


def _write_sidecar(path: Path, meta: dict) -> None:
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")


def save_model(path: str | Path, config: ModelConfig, weights: ModelWeights,
               extra: dict | None = None) -> None:
    path = Path(path)
    names = [n for n, _ in tensor_order(config)]
    meta = {"config": config.to_dict(), "extra": extra or {}}
    with open(path, "wb") as fh:
        _write_header(fh, PAYLOAD_F32, meta, len(names))
        for name in names:
            arr = np.ascontiguousarray(weights[name], dtype="<f4")
            _write_name_dims(fh, name, arr)
            fh.write(arr.tobytes())
    _write_sidecar(path, meta)


def load_model(path: str | Path):
    """Returns (config, weights, extra)."""
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ModelFileError(f"cannot open {path}: {exc}") from None
    with fh:
        payload, meta, count = _read_header(fh)
        if payload != PAYLOAD_F32:
            raise ModelFileError("expected a float32 model container, found int8 payload")
        config = ModelConfig.from_dict(meta["config"])
        expected = [n for n, _ in tensor_order(config)]
        if count != len(expected):
            raise ModelFileError(f"tensor count {count} does not match config ({len(expected)})")
        weights = ModelWeights()
        for want in expected:
            name, dims = _read_name_dims(fh)
            if name != want:
                raise ModelFileError(f"tensor order mismatch: expected {want}, found {name}")
            n_vals = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(_read_exact(fh, 4 * n_vals), dtype="<f4").reshape(dims)
            weights[name] = arr.astype(np.float32)
    return config, weights, meta.get("extra", {})


def save_quantized(path: str | Path, config: ModelConfig, int8_tensors: dict,
                   tensor_params: dict, extra: dict) -> None:
    """Quantized container: int8 tensors with per-tensor scale/zero-point.

    `extra` carries everything not representable as an int8 tensor
    (float biases, activation quantization records).
    """
    path = Path(path)
    meta = {"config": config.to_dict(), "extra": extra}
    with open(path, "wb") as fh:
        _write_header(fh, PAYLOAD_INT8, meta, len(int8_tensors))
        for name, arr in int8_tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.int8)
            _write_name_dims(fh, name, arr)
            qp = tensor_params[name]
            fh.write(struct.pack("<di", float(qp.scale), int(qp.zero_point)))
            fh.write(arr.tobytes())
    _write_sidecar(path, meta)


def load_quantized(path: str | Path):
    """Returns (config, int8 tensors, per-tensor (scale, zero_point), extra)."""
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ModelFileError(f"cannot open {path}: {exc}") from None
    with fh:
        payload, meta, count = _read_header(fh)
        if payload != PAYLOAD_INT8:
            raise ModelFileError("expected an int8 container, found float32 payload")
        config = ModelConfig.from_dict(meta["config"])
        tensors: dict[str, np.ndarray] = {}
        params: dict[str, tuple[float, int]] = {}
        for _ in range(count):
            name, dims = _read_name_dims(fh)
            scale, zp = struct.unpack("<di", _read_exact(fh, 12))
            n_vals = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(_read_exact(fh, n_vals), dtype=np.int8).reshape(dims)
            tensors[name] = arr.copy()
            params[name] = (scale, zp)
    return config, tensors, params, meta.get("extra", {})
