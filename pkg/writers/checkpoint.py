"""HNET1 checkpoints: named float64 tensors in a fixed little-endian layout.

    magic   b"HNET1"
    u32     version (1)
    u32     record count
    record: u32 name_len, name (utf-8), u32 rank, rank x u64 dims,
            prod(dims) x f64 payload

All integers and floats are little-endian regardless of the host. Files are
written to a temporary name and renamed into place.
"""
from __future__ import annotations
import json
import logging
import os
import struct
import tempfile
from typing import Any, Dict, Mapping

import numpy as np

from shared.errors import CheckpointError
from shared.schemas import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"HNET1"
VERSION = 1
_F8 = np.dtype("<f8")


def encode_checkpoint(tensors: Mapping[str, Tensor]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(_F8, copy=False).tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def read(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated while reading {what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Dict[str, Tensor]:
    r = _Reader(data, source)
    if r.read(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{source}: not an HNET1 checkpoint (bad magic)")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    out: Dict[str, Tensor] = {}
    for i in range(count):
        (name_len,) = r.unpack("<I", f"record {i} name length")
        try:
            name = r.read(name_len, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{source}: record {i} name is not utf-8") from e
        (rank,) = r.unpack("<I", f"record {i} rank")
        if rank > 32:
            raise CheckpointError(f"{source}: record {name!r} has implausible rank {rank}")
        dims = r.unpack(f"<{rank}Q", f"record {i} dims")
        size = 1
        for n in dims:
            size *= n
        if size * 8 > len(data):
            raise CheckpointError(f"{source}: record {name!r} claims {size} values, more than the file holds")
        payload = r.read(size * 8, f"record {name!r} payload")
        if name in out:
            raise CheckpointError(f"{source}: duplicate record {name!r}")
        out[name] = np.frombuffer(payload, dtype=_F8).astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes after {count} records")
    return out


def _atomic_write(path: str, data: bytes) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".hnet-", dir=parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(tensors: Mapping[str, Tensor], path: str) -> None:
    data = encode_checkpoint(tensors)
    _atomic_write(path, data)
    logger.info("saved checkpoint %s (%d tensors, %d bytes)", path, len(tensors), len(data))


def load_checkpoint(path: str) -> Dict[str, Tensor]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data, path)


# Model kind and config live next to the tensors in <checkpoint>.json.

def sidecar_path(path: str) -> str:
    return path + ".json"


def write_sidecar(path: str, meta: Mapping[str, Any]) -> None:
    _atomic_write(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))


def read_sidecar(path: str, kind: str) -> Dict[str, Any]:
    """Metadata of checkpoint `path`; its "model" entry must equal `kind`."""
    meta_path = sidecar_path(path)
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint metadata {meta_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{meta_path}: invalid JSON ({e})") from e
    if not isinstance(meta, dict) or meta.get("model") != kind:
        found = meta.get("model") if isinstance(meta, dict) else None
        raise CheckpointError(f"{path}: checkpoint holds {found!r}, expected {kind!r}")
    return meta
