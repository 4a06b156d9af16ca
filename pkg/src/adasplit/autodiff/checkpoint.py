"""Versioned flat parameter files.

Layout::

    b"ADSPCKPT"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}
    payload                     float64 little-endian, row-major, concatenated in header order

Names are written sorted so identical parameter sets give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"ADSPCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def dumps(tensors: Mapping[str, object], meta: Mapping | None = None) -> bytes:
    names = sorted(tensors)
    entries = []
    chunks = []
    offset = 0
    for name in names:
        arr = np.asarray(_as_array(tensors[name]), dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta or {}), "tensors": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a parameter checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[20 : 20 + hlen])
    payload = memoryview(blob)[20 + hlen :]
    out = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        arr = np.frombuffer(payload[start : start + 8 * n], dtype="<f8").astype(np.float64)
        out[e["name"]] = arr.reshape(tuple(e["shape"]))
    return out, header["meta"]


def save(path: str | Path, tensors: Mapping[str, object], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())


def load_into(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy arrays into existing parameters; names and shapes must match exactly."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape} != expected {t.shape}")
        t.data[...] = arrays[name]
