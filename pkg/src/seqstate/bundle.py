"""Flat binary serialization of parameter bundles.

Layout (little-endian throughout):

    magic   4 bytes  b"SQS1"
    tag     u32 length + utf-8 bytes   (architecture tag)
    count   u32                        (number of arrays)
    entry*  u32 name length + utf-8 name, u32 ndim, u64 * ndim extents
    data    raw float64 arrays, concatenated in entry order

Round-trips are bit-exact: arrays are written and read as raw IEEE-754
doubles with no textual conversion.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"SQS1"


class BundleFormatError(ValueError):
    pass


def save_bundle(path: str | Path, tag: str, arrays: dict[str, np.ndarray]) -> None:
    chunks = [_MAGIC]
    tag_bytes = tag.encode("utf-8")
    chunks.append(struct.pack("<I", len(tag_bytes)))
    chunks.append(tag_bytes)
    chunks.append(struct.pack("<I", len(arrays)))
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload.append(arr.tobytes())
    chunks.extend(payload)
    Path(path).write_bytes(b"".join(chunks))


def load_bundle(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise BundleFormatError(f"{path}: not a parameter bundle")
    pos = 4

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, raw, pos)
        pos += size
        return values

    (tag_len,) = read("<I")
    tag = raw[pos:pos + tag_len].decode("utf-8")
    pos += tag_len
    (count,) = read("<I")
    headers = []
    for _ in range(count):
        (name_len,) = read("<I")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = read("<I")
        shape = read(f"<{ndim}Q") if ndim else ()
        headers.append((name, tuple(int(s) for s in shape)))
    arrays: dict[str, np.ndarray] = {}
    for name, shape in headers:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        arr = np.frombuffer(raw[pos:pos + nbytes], dtype="<f8").reshape(shape).copy()
        pos += nbytes
        arrays[name] = arr
    if pos != len(raw):
        raise BundleFormatError(f"{path}: trailing bytes in bundle")
    return tag, arrays
