"""Checkpoint files.

Layout: 8-byte magic ``EMOCKPT1``, little-endian u32 format version,
u64 JSON length, the UTF-8 JSON metadata (config echo, parameter and
buffer names/shapes/offsets, training metadata), then the raw
little-endian float32 blobs in the declared order. Offsets are relative
to the start of the blob section. A load followed by a save reproduces
the file byte for byte, and a loaded model's forward pass is
bit-identical to the saved one's.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import EmotionClassifier, config_from_dict, config_to_dict
from .rng import derive_rng

MAGIC = b"EMOCKPT1"
VERSION = 1


def save_checkpoint(model: EmotionClassifier, path: str | Path,
                    training_meta: dict | None = None) -> None:
    params = list(model.named_parameters())
    buffers = list(model.named_buffers())

    entries = []
    blobs = []
    offset = 0
    for name, tensor in params:
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        entries.append({"name": name, "kind": "param",
                        "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    for name, arr in buffers:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "kind": "buffer",
                        "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes

    meta = {
        "config": config_to_dict(model),
        "tensors": entries,
        "blob_bytes": offset,
        "training": training_meta or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path,
                    expected_config: dict | None = None) -> tuple[EmotionClassifier, dict]:
    """Rebuild the model a checkpoint describes.

    When ``expected_config`` (a config_to_dict-style mapping) is given,
    structural fields must match the checkpoint's echo, so that e.g. a
    "lite" checkpoint cannot be silently loaded into a "paper" run.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic in checkpoint {path}")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    (meta_len,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
    header_end = len(MAGIC) + 12
    if len(raw) < header_end + meta_len:
        raise CheckpointError(f"truncated checkpoint {path} (metadata cut short)")
    try:
        meta = json.loads(raw[header_end : header_end + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata in checkpoint {path}: {exc}") from exc

    blob_start = header_end + meta_len
    blob_bytes = meta["blob_bytes"]
    if len(raw) != blob_start + blob_bytes:
        raise CheckpointError(
            f"truncated checkpoint {path}: expected {blob_start + blob_bytes} bytes, "
            f"got {len(raw)}"
        )

    if expected_config is not None:
        mismatched = {
            k for k in expected_config
            if expected_config[k] != meta["config"].get(k)
        }
        if mismatched:
            raise CheckpointError(
                f"shape mismatch: checkpoint config differs from the requested one "
                f"in {sorted(mismatched)}"
            )

    cfg, pooling, n_classes, head_hidden = config_from_dict(meta["config"])
    model = EmotionClassifier(
        cfg, pooling, n_classes, derive_rng(0, "checkpoint-load"), head_hidden
    )

    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for entry in meta["tensors"]:
        name, kind = entry["name"], entry["kind"]
        if kind == "param":
            holder = params.get(name)
            target = None if holder is None else holder.data
        else:
            target = buffers.get(name)
        if target is None:
            raise CheckpointError(f"checkpoint {path} names unknown tensor '{name}'")
        shape = tuple(entry["shape"])
        if shape != target.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint has {shape}, "
                f"model expects {target.shape}"
            )
        start = blob_start + entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        end = start + 4 * count
        if end > len(raw):
            raise CheckpointError(f"truncated checkpoint {path}: blob '{name}' cut short")
        values = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
        target[...] = values
    return model, meta
