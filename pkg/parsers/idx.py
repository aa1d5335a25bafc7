"""IDX containers (the MNIST file format).

Only the two unsigned-byte layouts the digit datasets use are accepted:
0x00000803 (N x rows x cols images) and 0x00000801 (N labels). Dimensions are
big-endian u32. Image bytes are scaled to [0, 1]; labels stay integers.
"""
from __future__ import annotations
import gzip
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from shared.errors import IdxFormatError
from shared.schemas import LabeledImageSet

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MAX_ELEMENTS = 1 << 31


@dataclass
class IdxArray:
    magic: int
    dims: Tuple[int, ...]
    data: np.ndarray     # float64 in [0, 1] for images, int64 for labels


def parse_idx(data: bytes) -> IdxArray:
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise IdxFormatError(f"expected bytes, got {type(data).__name__}")
    data = bytes(data)
    if len(data) < 4:
        raise IdxFormatError(f"truncated header: {len(data)} bytes")
    magic = int.from_bytes(data[:4], "big")
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise IdxFormatError(f"bad magic 0x{magic:08x}")
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"truncated header: need {header} bytes, have {len(data)}")
    dims = tuple(int(v) for v in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
    count = 1
    for n in dims:
        count *= n
        if count > MAX_ELEMENTS:
            raise IdxFormatError(f"dimension overflow: {dims}")
    payload = len(data) - header
    if payload < count:
        raise IdxFormatError(f"truncated payload: {payload} of {count} bytes")
    if payload > count:
        raise IdxFormatError(f"{payload - count} trailing bytes after payload")
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if magic == IMAGES_MAGIC:
        values = raw.astype(np.float64) / 255.0
    else:
        values = raw.astype(np.int64)
    return IdxArray(magic, dims, values)


def maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise IdxFormatError(f"corrupt gzip stream: {e}") from e
    return data


def image_set(images: bytes, labels: bytes, source: str = "", split: str = "") -> LabeledImageSet:
    imgs = parse_idx(maybe_gunzip(images))
    labs = parse_idx(maybe_gunzip(labels))
    if imgs.magic != IMAGES_MAGIC or labs.magic != LABELS_MAGIC:
        raise IdxFormatError("expected an image file and a label file")
    if imgs.dims[0] != labs.dims[0]:
        raise IdxFormatError(f"{imgs.dims[0]} images but {labs.dims[0]} labels")
    if labs.data.size and labs.data.max() > 9:
        raise IdxFormatError(f"label {int(labs.data.max())} outside 0..9")
    return LabeledImageSet(imgs.data, labs.data, source, split)
