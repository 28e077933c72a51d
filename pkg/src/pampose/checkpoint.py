"""Binary parameter checkpoints.

Layout::

    b"PAMPOSE1"                      8-byte magic (carries the format version)
    uint64 little-endian             length of the JSON manifest in bytes
    manifest (UTF-8 JSON)            {"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
    data                             concatenated little-endian float64 arrays

``offset`` is the byte offset of a tensor inside the data section.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"PAMPOSE1"


class CheckpointVersionError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, params: dict[str, Tensor], meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, Tensor], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointVersionError(f"{path}: expected magic {MAGIC!r}, found {raw[:8]!r}")
    (size,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + size].decode())
    data = raw[16 + size :]
    params = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"]).reshape(entry["shape"])
        params[entry["name"]] = Tensor(arr.astype(np.float64), requires_grad=True)
    return params, manifest["meta"]
