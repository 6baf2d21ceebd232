"""Flat named-array container used for checkpoints and embedding tables.

Layout (little-endian)::

    magic  b"NARR"      4 bytes
    version             uint32
    count               uint32
    count x entry:
        name_len        uint32, then UTF-8 name
        dtype tag       4 ASCII bytes, e.g. b"<f8 " / b"<i8 " / b"|u1 "
        ndim            uint32, then ndim x uint64 extents
        payload         row-major bytes
    trailer             uint64 total byte length of everything before it

The trailer lets a truncated file be rejected before any array is built.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"NARR"
VERSION = 1
_TAGS = {"float64": b"<f8 ", "int64": b"<i8 ", "uint8": b"|u1 ", "float32": b"<f4 ", "int32": b"<i4 "}
_DTYPES = {tag: np.dtype(name).newbyteorder("<") for name, tag in _TAGS.items()}


class ArrayFileError(ValueError):
    """Raised for unreadable, truncated or version-mismatched array files."""


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _TAGS.get(arr.dtype.name)
        if tag is None:
            raise TypeError(f"array {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(tag)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", len(body))


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise ArrayFileError("not a named-array file (bad magic)")
    (declared,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if declared != len(blob) - 8:
        raise ArrayFileError(f"truncated or padded file: trailer says {declared} bytes, found {len(blob) - 8}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ArrayFileError(f"unsupported format version {version} (expected {VERSION})")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            tag = blob[pos : pos + 4]
            pos += 4
            if tag not in _DTYPES:
                raise ArrayFileError(f"array {name!r}: unknown dtype tag {tag!r}")
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            dt = _DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(blob) - 8:
                raise ArrayFileError(f"array {name!r}: payload runs past end of file")
            arr = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape)
            out[name] = arr.astype(dt.newbyteorder("="), copy=True)
            pos += nbytes
    except struct.error as exc:
        raise ArrayFileError(f"corrupt header: {exc}") from exc
    if pos != len(blob) - 8:
        raise ArrayFileError("trailing bytes after last array")
    return out


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load_arrays(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
