"""Tensor container used for checkpoints and feature files.

Layout: an 8-byte little-endian manifest length, a UTF-8 JSON manifest
``{"format_version": "1", "tensors": [{name, dtype, shape, offset}...], "meta": {...}}``
and a little-endian payload. Offsets are relative to the start of the payload
and tensors are packed back to back in manifest order.
"""
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from models.nn_core import ParameterStore
from training.optimizer import OptimizerState

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_MOMENT_PREFIX = ("adam.m/", "adam.v/")


class CheckpointFormatError(ValueError):
    pass


class UnsupportedVersionError(CheckpointFormatError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    for code, dt in _DTYPES.items():
        if arr.dtype == dt or arr.dtype == dt.newbyteorder("="):
            return code
    raise CheckpointFormatError(f"unsupported tensor dtype {arr.dtype}")


# ---------------------------
# Raw tensor files
# ---------------------------
def write_tensor_file(path, tensors: dict, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)

    manifest = json.dumps(
        {"format_version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")

    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for chunk in chunks:
            f.write(chunk)


def read_tensor_file(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise CheckpointFormatError(f"{path}: truncated (no manifest length)")
    (n_manifest,) = struct.unpack("<Q", raw[:8])
    if 8 + n_manifest > len(raw):
        raise CheckpointFormatError(f"{path}: truncated manifest")

    try:
        manifest = json.loads(raw[8:8 + n_manifest].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable manifest ({e})") from e

    version = str(manifest.get("format_version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version!r} (expected {FORMAT_VERSION!r})")

    payload = memoryview(raw)[8 + n_manifest:]
    entries = manifest.get("tensors", [])
    tensors = {}

    for k, entry in enumerate(entries):
        name = entry["name"]
        if entry["dtype"] not in _DTYPES:
            raise CheckpointFormatError(f"{path}: tensor {name} has unknown dtype {entry['dtype']!r}")
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        start = int(entry["offset"])
        end = start + nbytes
        next_start = int(entries[k + 1]["offset"]) if k + 1 < len(entries) else len(payload)

        if end > len(payload):
            raise CheckpointFormatError(f"{path}: tensor {name} runs past the end of the payload (truncated or wrong shape {list(shape)})")
        if end != next_start:
            raise CheckpointFormatError(f"{path}: tensor {name} shape {list(shape)} does not match its payload span")

        tensors[name] = np.frombuffer(payload[start:end], dtype=dt).reshape(shape).copy()

    return tensors, manifest.get("meta", {})


# ---------------------------
# Checkpoints
# ---------------------------
@dataclass
class Checkpoint:
    store: ParameterStore
    meta: dict
    optimizer: OptimizerState | None = None


def save_checkpoint(path, ckpt: Checkpoint):
    tensors = {name: ckpt.store[name] for name in ckpt.store}
    meta = dict(ckpt.meta)
    meta["frozen"] = [n for n in ckpt.store if not ckpt.store.param(n).trainable]

    if ckpt.optimizer is not None:
        meta["optimizer"] = ckpt.optimizer.hyper()
        for name in ckpt.optimizer.m:
            tensors[_MOMENT_PREFIX[0] + name] = ckpt.optimizer.m[name]
            tensors[_MOMENT_PREFIX[1] + name] = ckpt.optimizer.v[name]
    else:
        meta.pop("optimizer", None)

    write_tensor_file(path, tensors, meta)
    logger.info("checkpoint saved: %s (%d tensors)", path, len(ckpt.store))


def load_checkpoint(path) -> Checkpoint:
    tensors, meta = read_tensor_file(path)
    frozen = set(meta.get("frozen", []))

    params = {n: a for n, a in tensors.items() if not n.startswith(_MOMENT_PREFIX)}
    if not params:
        raise CheckpointFormatError(f"{path}: no parameter tensors")
    dtype = next(iter(params.values())).dtype

    store = ParameterStore(dtype)
    for name, arr in params.items():
        store.add(name, arr, trainable=name not in frozen)

    optimizer = None
    if "optimizer" in meta:
        optimizer = OptimizerState(**meta["optimizer"])
        for name, arr in tensors.items():
            if name.startswith(_MOMENT_PREFIX[0]):
                optimizer.m[name[len(_MOMENT_PREFIX[0]):]] = arr
            elif name.startswith(_MOMENT_PREFIX[1]):
                optimizer.v[name[len(_MOMENT_PREFIX[1]):]] = arr

    return Checkpoint(store=store, meta=meta, optimizer=optimizer)
