"""Binary container for weights and datasets.

Wire format, all integers little-endian:

    offset 0   magic "HSTE" (4 bytes)
    offset 4   u32 format version (currently 1)
    offset 8   u64 manifest length in bytes
    offset 16  manifest, UTF-8 JSON
    ...        u32 CRC-32 of the blob
    ...        blob: raw tensor bytes

Tensors are little-endian IEEE-754 binary32 ("f32") or little-endian signed
64-bit integers ("i64"), row-major, located by (offset, length) pairs in the
manifest's "tensors" list. The manifest also repeats the blob checksum as
"blob_crc32" and its size as "blob_length". Manifest JSON is written with
sorted keys and compact separators so identical content gives identical
bytes.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import CorruptionError, FormatError

MAGIC = b"HSTE"
VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8")}


def write_container(manifest: dict, tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize a manifest plus named tensors.

    The manifest must not already contain the bookkeeping keys; "tensors",
    "blob_length" and "blob_crc32" are added here. Tensor order in the blob
    follows the dict's insertion order.
    """
    for key in ("tensors", "blob_length", "blob_crc32"):
        if key in manifest:
            raise FormatError(f"manifest key {key!r} is reserved")
    records = []
    parts = []
    offset = 0
    for name, arr in tensors.items():
        if arr.dtype == np.float32:
            dtype = "f32"
        elif arr.dtype == np.int64:
            dtype = "i64"
        else:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype], copy=False).tobytes()
        records.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "length": len(raw),
            }
        )
        parts.append(raw)
        offset += len(raw)
    blob = b"".join(parts)
    full = dict(manifest)
    full["tensors"] = records
    full["blob_length"] = len(blob)
    full["blob_crc32"] = zlib.crc32(blob)
    payload = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(payload))
    return head + payload + struct.pack("<I", zlib.crc32(blob)) + blob


def read_container(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse container bytes into (manifest, tensors).

    Raises FormatError for structural problems (magic, version, JSON) and
    CorruptionError for integrity failures (truncation, checksum, bounds).
    Returned arrays are read-only views over the input buffer.
    """
    if len(data) < 16:
        raise FormatError("container too short for its header")
    if data[:4] != MAGIC:
        raise FormatError("bad magic, not a HSTE container")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    (mlen,) = struct.unpack_from("<Q", data, 8)
    if 16 + mlen + 4 > len(data):
        raise CorruptionError("container truncated inside manifest or checksum")
    try:
        manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object")
    (crc,) = struct.unpack_from("<I", data, 16 + mlen)
    blob = data[16 + mlen + 4 :]
    declared = manifest.get("blob_length", len(blob))
    if declared != len(blob):
        raise CorruptionError(f"blob length {len(blob)} does not match declared {declared}")
    actual_crc = zlib.crc32(blob)
    if actual_crc != crc:
        raise CorruptionError("blob checksum mismatch against the wire field")
    if manifest.get("blob_crc32", crc) != crc:
        raise CorruptionError("blob checksum mismatch against the manifest field")

    tensors: dict[str, np.ndarray] = {}
    for rec in manifest.get("tensors", []):
        try:
            name, dtype, shape = rec["name"], rec["dtype"], tuple(rec["shape"])
            offset, length = rec["offset"], rec["length"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed tensor record: {rec!r}") from exc
        if dtype not in _DTYPES:
            raise FormatError(f"tensor {name!r} has unknown dtype {dtype!r}")
        np_dtype = _DTYPES[dtype]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count * np_dtype.itemsize != length:
            raise CorruptionError(f"tensor {name!r}: length {length} does not match shape {shape}")
        if offset < 0 or offset + length > len(blob):
            raise CorruptionError(f"tensor {name!r} extends outside the blob")
        arr = np.frombuffer(blob, dtype=np_dtype, count=count, offset=offset).reshape(shape)
        tensors[name] = arr
    return manifest, tensors
