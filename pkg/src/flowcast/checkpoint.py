"""Checkpoint archive: a JSON header (tensor name -> shape/dtype/offset plus
free-form metadata) followed by raw little-endian tensor payloads. Writes are
atomic (tmp file + rename)."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"FCKP"
_DTYPES = {"float32": "<f4", "int64": "<i8"}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    path = Path(path)
    entries = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype == np.float32:
            dtype = "float32"
        elif arr.dtype == np.int64:
            dtype = "int64"
        else:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        entries[name] = {
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": len(payload),
        }
        payload.extend(arr.astype(_DTYPES[dtype]).tobytes())
    header = json.dumps({"tensors": entries, "meta": meta or {}},
                        sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint archive")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + hlen].decode())
    body = raw[12 + hlen:]
    tensors = {}
    for name, entry in header["tensors"].items():
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(body, dtype=dt, count=count, offset=start)
        tensors[name] = arr.reshape(entry["shape"]).copy()
    return tensors, header["meta"]


def checkpoint_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
