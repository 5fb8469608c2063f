"""Writer for the weight-container wire format.

Layout: magic "HSTE", u32 little-endian version (1), u64 little-endian
manifest length, UTF-8 JSON manifest (sorted keys, compact separators),
u32 little-endian CRC-32 of the blob, then the raw tensor blob. Tensors are
little-endian, float32 or int64, laid out back to back in insertion order;
the manifest's "tensors" list records name, dtype, shape, offset and length,
and repeats the blob CRC and length for self-description.

Kept independent of the inference runtime on purpose: the byte format is
the only contract between the two packages.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"HSTE"
VERSION = 1

_DTYPES = {"float32": "f32", "int64": "i64"}
_RESERVED = ("tensors", "blob_length", "blob_crc32")


def write_container(manifest: dict, tensors: dict[str, np.ndarray]) -> bytes:
    for key in _RESERVED:
        if key in manifest:
            raise ValueError(f"manifest key {key!r} is reserved")
    records = []
    parts = []
    offset = 0
    for name, arr in tensors.items():
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"tensor {name!r}: dtype {arr.dtype} not supported")
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        records.append(
            {
                "name": name,
                "dtype": _DTYPES[arr.dtype.name],
                "shape": list(arr.shape),
                "offset": offset,
                "length": len(raw),
            }
        )
        parts.append(raw)
        offset += len(raw)
    blob = b"".join(parts)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    full = dict(manifest)
    full["tensors"] = records
    full["blob_length"] = len(blob)
    full["blob_crc32"] = crc
    payload = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(payload))
    return head + payload + struct.pack("<I", crc) + blob
