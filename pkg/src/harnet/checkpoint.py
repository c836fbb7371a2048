"""Binary parameter container.

Layout (all integers little-endian)::

    8 bytes   magic  b"HARNETCK"
    4 bytes   format version (uint32, currently 1)
    8 bytes   header length H (uint64)
    H bytes   UTF-8 JSON header
    ...       payload: tensors back to back as raw little-endian float64

The header holds ``config`` (model config dict), ``seed``, free-form
``meta`` and a ``tensors`` list of ``{"path", "shape", "offset", "count"}``
where offset/count are in float64 elements from the start of the payload.
Values round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"HARNETCK"
VERSION = 1
_LE_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict
    seed: int
    meta: dict = field(default_factory=dict)


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for path, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype=_LE_F64)
        entries.append({"path": path, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {"config": ckpt.config, "seed": int(ckpt.seed), "meta": ckpt.meta, "tensors": entries}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", VERSION, len(hbytes)), hbytes, *chunks])


def decode(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a HAR-Net checkpoint (bad magic)")
    if len(blob) < 20:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(blob)[20 + hlen :]
    total = len(payload) // 8
    if len(payload) % 8:
        raise CheckpointError("payload is not a whole number of float64 values")
    tensors = {}
    try:
        for e in header["tensors"]:
            start, count = e["offset"], e["count"]
            if start + count > total or int(np.prod(e["shape"], dtype=np.int64)) != count:
                raise CheckpointError(f"tensor {e['path']} does not fit the payload")
            arr = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=start * 8)
            tensors[e["path"]] = arr.astype(np.float64).reshape(e["shape"])
        return Checkpoint(tensors, header["config"], header["seed"], header.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc!r}") from None


def save(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode(ckpt))


def load(path: str | os.PathLike) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(blob)


def same_tensors(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    """Bit-level equality of two tensor dicts (NaN payloads included)."""
    if list(a) != list(b):
        return False
    return all(a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
