"""Binary container for named float64 tensors plus a JSON header.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"MOTPRED\\x00"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header, keys sorted, no whitespace
    16+H    ...   float64 little-endian payload

The header carries ``"tensors": [[name, [dim, ...]], ...]``; the payload is
each listed tensor flattened in C (row-major) order, concatenated in the
listed order with no padding. Every other header key is free-form metadata.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MOTPRED\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    reason = "checkpoint-error"


def write_tensors(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    meta = dict(header)
    meta["tensors"] = [[name, list(np.shape(arr))] for name, arr in tensors.items()]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated file")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    tensors = {}
    offset = start
    for name, shape in header.pop("tensors"):
        n = math.prod(shape)
        end = offset + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: payload truncated at tensor {name!r}")
        tensors[name] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, tensors
