"""Versioned checkpoint files: a JSON header plus a raw little-endian tensor table.

Layout::

    b"GFLCKPT\\0"        magic (8 bytes)
    uint32 LE            format version
    uint64 LE            header length H
    H bytes              UTF-8 JSON: {"meta": {...}, "tensors": [{name, shape, dtype, offset, nbytes}]}
    ...                  concatenated tensor payloads

Tensors are stored in the precision they were trained in (``<f4`` or
``<f8``) so that a float64 run resumes bit-identically.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GFLCKPT\0"
VERSION = 1
_DTYPES = {"<f4", "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    index = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        dt = le.dtype.str
        if dt not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(le).tobytes()
        index.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(blob[start : start + hlen])
    base = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        if entry["dtype"] not in _DTYPES:
            raise CheckpointError(f"{path}: bad dtype for {entry['name']}")
        lo = base + entry["offset"]
        raw = blob[lo : lo + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return tensors, header["meta"]


def import_pretrained(path, model) -> None:
    """Hook for loading external pre-trained backbone weights (not provided)."""
    raise NotImplementedError(
        "pre-trained weight import is not bundled; supply a converter that maps "
        "external parameter names onto model.named_parameters()"
    )
