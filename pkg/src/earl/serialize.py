"""Checkpoint files: a JSON manifest next to a raw binary payload.

``<stem>.json`` lists tensor names, shapes, and dtypes plus free-form
metadata; ``<stem>.bin`` is the concatenation of the tensors' raw
little-endian bytes in manifest order. float64 is the default payload
dtype and is required for bitwise-exact training resumption; float32
halves checkpoint size at the cost of exactness.
"""

import json
import os

import numpy as np

from .errors import DataError

CHECKPOINT_FORMAT = "earl-checkpoint"
CHECKPOINT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def manifest_path(stem) -> str:
    return f"{stem}.json"


def payload_path(stem) -> str:
    return f"{stem}.bin"


def save_checkpoint(stem, tensors: dict, meta: dict, dtype: str = "float64") -> None:
    if dtype not in _DTYPES:
        raise DataError(f"unsupported checkpoint dtype {dtype!r}")
    np_dtype = _DTYPES[dtype]
    entries = []
    blobs = []
    for name, values in tensors.items():
        arr = np.ascontiguousarray(np.asarray(values), dtype=np_dtype)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(arr.tobytes())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "tensors": entries,
    }
    with open(manifest_path(stem), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(payload_path(stem), "wb") as f:
        for blob in blobs:
            f.write(blob)


def load_checkpoint(stem) -> tuple[dict, dict]:
    """Returns (tensors as float64 arrays, metadata)."""
    mpath, ppath = manifest_path(stem), payload_path(stem)
    if not os.path.exists(mpath) or not os.path.exists(ppath):
        raise DataError(f"checkpoint not found: {stem}")
    with open(mpath, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a checkpoint manifest: {mpath}")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version: {manifest.get('version')}")
    tensors: dict[str, np.ndarray] = {}
    with open(ppath, "rb") as f:
        payload = f.read()
    offset = 0
    for entry in manifest["tensors"]:
        np_dtype = _DTYPES.get(entry["dtype"])
        if np_dtype is None:
            raise DataError(f"unsupported tensor dtype {entry['dtype']!r} in {mpath}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(np_dtype).itemsize
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"checkpoint payload truncated: {ppath}")
        arr = np.frombuffer(chunk, dtype=np_dtype).reshape(shape).astype(np.float64)
        tensors[entry["name"]] = arr
        offset += nbytes
    if offset != len(payload):
        raise DataError(f"checkpoint payload has {len(payload) - offset} trailing bytes: {ppath}")
    return tensors, manifest["meta"]
