"""Model checkpoint format, run manifests, and CSV emission.

Checkpoint layout: the magic bytes ``CAPS1`` followed by one record per
tensor: a little-endian uint32 name length, the UTF-8 name, a uint32
rank, one uint32 per extent, then the float64 little-endian values.
Records named ``meta.*`` carry the numeric model configuration (encoder
kind code, capsule extents, truncation limits) and are separated from
parameters on load, so a checkpoint alone is enough to rebuild the model.

CSV files use newline line endings, '.' decimals, and floats rendered at
17 significant digits so equal runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .capsule import CapsuleHeadConfig
from .encoders import ENCODER_KINDS, EncoderConfig
from .tensor import Parameter, Tensor
from .training import (
    AblationRow,
    EpochRecord,
    Metrics,
    SweepCell,
    TrainConfig,
)

MAGIC = b"CAPS1"
FORMAT_VERSION = 1

_KIND_CODE = {kind: i for i, kind in enumerate(ENCODER_KINDS)}
_CODE_KIND = {i: kind for kind, i in _KIND_CODE.items()}
_HEAD_BASELINE, _HEAD_CAPSULE = 0, 1


class ModelFormatError(ValueError):
    pass


def fmt_float(x: float) -> str:
    return f"{x:.17g}"


def _write_record(fh, name: str, values: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.asarray(values, dtype="<f8")
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(arr.tobytes())


def model_meta(config: TrainConfig, e_d: int) -> Dict[str, object]:
    """Numeric metadata embedded in a checkpoint."""
    meta: Dict[str, object] = {
        "format_version": FORMAT_VERSION,
        "encoder_kind": _KIND_CODE[config.encoder.kind],
        "kernel_sizes": list(config.encoder.kernel_sizes),
        "filters_per_kernel": config.encoder.filters_per_kernel,
        "hidden_dim": config.encoder.hidden_dim,
        "head_type": _HEAD_BASELINE if config.head is None else _HEAD_CAPSULE,
        "n_s": config.n_s,
        "n_w": config.n_w,
        "e_d": e_d,
    }
    if config.head is not None:
        meta.update({
            "n_pc": config.head.n_pc,
            "n_cc": config.head.n_cc,
            "d": config.head.d,
            "n_cls": config.head.n_cls,
            "routing_iterations": config.head.routing_iterations,
        })
    return meta


def config_parts_from_meta(meta: Dict[str, object]) -> Tuple[
        EncoderConfig, Optional[CapsuleHeadConfig], int, int, int]:
    """Rebuild (encoder, head, n_s, n_w, e_d) from checkpoint metadata."""
    encoder = EncoderConfig(
        kind=_CODE_KIND[int(meta["encoder_kind"])],
        kernel_sizes=tuple(int(k) for k in meta["kernel_sizes"]),
        filters_per_kernel=int(meta["filters_per_kernel"]),
        hidden_dim=int(meta["hidden_dim"]),
    )
    if int(meta["head_type"]) == _HEAD_BASELINE:
        head = None
    else:
        head = CapsuleHeadConfig(
            n_pc=int(meta["n_pc"]),
            n_cc=int(meta["n_cc"]),
            d=int(meta["d"]),
            n_cls=int(meta["n_cls"]),
            routing_iterations=int(meta["routing_iterations"]),
        )
    return encoder, head, int(meta["n_s"]), int(meta["n_w"]), int(meta["e_d"])


def save_model(path, params: Dict[str, Parameter], meta: Dict[str, object]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for key in sorted(meta):
            value = meta[key]
            arr = np.asarray(value, dtype=np.float64)
            _write_record(fh, f"meta.{key}", arr)
        for name in sorted(params):
            _write_record(fh, name, params[name].tensor.values)


def load_model(path) -> Tuple[Dict[str, Parameter], Dict[str, object]]:
    """Read a checkpoint back into Parameters plus its metadata dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(
            f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC.decode()} header")
    offset = len(MAGIC)
    params: Dict[str, Parameter] = {}
    meta: Dict[str, object] = {}

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(blob):
            raise ModelFormatError(f"{path}: truncated record at byte {offset}")
        piece = blob[offset:offset + count]
        offset += count
        return piece

    while offset < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape).copy()
        if name.startswith("meta."):
            key = name[len("meta."):]
            if values.ndim == 0:
                scalar = float(values)
                meta[key] = int(scalar) if scalar == int(scalar) else scalar
            else:
                meta[key] = [int(v) if v == int(v) else float(v) for v in values]
        else:
            params[name] = Parameter(Tensor(values), name)
    if not meta and not params:
        raise ModelFormatError(f"{path}: no records found")
    return params, meta


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(config_dict: dict, seed: int, input_paths: Dict[str, str]) -> dict:
    return {
        "config": config_dict,
        "resolved_seed": seed,
        "input_digests": {name: sha256_file(path) for name, path in sorted(input_paths.items())},
        "tool_version": __version__,
    }


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_METRICS_HEADER = "epoch,split,loss,accuracy,precision,recall"


def _metrics_row(epoch: int, m: Metrics) -> str:
    return ",".join([str(epoch), m.split, fmt_float(m.loss), fmt_float(m.accuracy),
                     fmt_float(m.precision), fmt_float(m.recall)])


def write_metrics_csv(path, history: Sequence[EpochRecord],
                      test: Optional[Metrics] = None,
                      test_epoch: Optional[int] = None) -> None:
    lines = [_METRICS_HEADER]
    for record in history:
        lines.append(_metrics_row(record.epoch, record.train))
        lines.append(_metrics_row(record.epoch, record.valid))
    if test is not None:
        lines.append(_metrics_row(test_epoch if test_epoch is not None else -1, test))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_ablation_csv(path, rows: Sequence[AblationRow]) -> None:
    lines = ["model,valid_accuracy,test_accuracy,test_precision,test_recall,test_loss"]
    for row in rows:
        lines.append(",".join([
            row.label,
            fmt_float(row.valid.accuracy),
            fmt_float(row.test.accuracy),
            fmt_float(row.test.precision),
            fmt_float(row.test.recall),
            fmt_float(row.test.loss),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_csv(path, cells: Sequence[SweepCell]) -> None:
    lines = ["parameter,value,mean_accuracy,mean_runtime_s,run_accuracies"]
    for cell in cells:
        runs = ";".join(fmt_float(a) for a in cell.accuracies)
        lines.append(",".join([
            cell.parameter, str(cell.value), fmt_float(cell.mean_accuracy),
            fmt_float(cell.mean_runtime_s), runs,
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_representations_csv(path, labels: np.ndarray, vectors: np.ndarray) -> None:
    """One row per document: label then the flattened stage vector."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label, vector in zip(labels, vectors):
            fh.write(",".join([str(int(label))] + [fmt_float(v) for v in vector]) + "\n")
