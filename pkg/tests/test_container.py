"""Weight/dataset container wire format: round-trips and failure taxonomy."""

import json
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haste.container import MAGIC, VERSION, read_container, write_container
from haste.errors import CorruptionError, FormatError


def sample_container() -> bytes:
    rs = np.random.RandomState(7)
    return write_container(
        {"purpose": "test", "nested": {"a": [1, 2]}},
        {
            "weights": rs.randn(2, 3, 3, 3).astype(np.float32),
            "labels": np.arange(10, dtype=np.int64),
            "empty": np.zeros((0,), dtype=np.float32),
            "scalarish": np.array([[3.5]], dtype=np.float32),
        },
    )


class TestRoundTrip:
    def test_bit_exact_tensors_and_manifest_extras(self):
        rs = np.random.RandomState(11)
        tensors = {
            "a": rs.randn(4, 5).astype(np.float32),
            "b": rs.randint(-(2**40), 2**40, size=(7,)).astype(np.int64),
        }
        data = write_container({"note": "hello", "version_tag": 3}, tensors)
        manifest, loaded = read_container(data)
        assert manifest["note"] == "hello"
        assert manifest["version_tag"] == 3
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            assert np.array_equal(loaded[name], tensors[name])
            assert loaded[name].tobytes() == tensors[name].tobytes()

    def test_header_layout(self):
        data = sample_container()
        assert data[:4] == MAGIC
        assert struct.unpack_from("<I", data, 4)[0] == VERSION
        mlen = struct.unpack_from("<Q", data, 8)[0]
        manifest = json.loads(data[16 : 16 + mlen])
        assert manifest["blob_length"] == len(data) - 16 - mlen - 4
        wire_crc = struct.unpack_from("<I", data, 16 + mlen)[0]
        assert wire_crc == manifest["blob_crc32"]
        assert wire_crc == zlib.crc32(data[16 + mlen + 4 :])

    def test_blob_follows_insertion_order(self):
        a = np.ones(3, dtype=np.float32)
        b = np.zeros(2, dtype=np.int64)
        manifest, _ = read_container(write_container({}, {"x": a, "y": b}))
        recs = {r["name"]: r for r in manifest["tensors"]}
        assert recs["x"]["offset"] == 0
        assert recs["y"]["offset"] == recs["x"]["length"] == 12

    def test_deterministic_bytes(self):
        assert sample_container() == sample_container()

    def test_empty_container(self):
        manifest, tensors = read_container(write_container({}, {}))
        assert manifest["tensors"] == []
        assert tensors == {}

    def test_loaded_views_are_read_only(self):
        _, tensors = read_container(sample_container())
        with pytest.raises(ValueError):
            tensors["weights"][0, 0, 0, 0] = 1.0

    def test_non_contiguous_input_serialized_row_major(self):
        base = np.arange(24, dtype=np.float32).reshape(4, 6)
        view = base[:, ::2]
        _, tensors = read_container(write_container({}, {"v": view}))
        assert np.array_equal(tensors["v"], view)

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(0, 2**31),
        st.lists(st.tuples(st.integers(0, 5), st.integers(1, 4)), min_size=0, max_size=4),
    )
    def test_round_trip_random_shapes(self, seed, dims):
        rs = np.random.RandomState(seed % 2**31)
        tensors = {}
        for i, (n, m) in enumerate(dims):
            if i % 2:
                tensors[f"t{i}"] = rs.randn(n, m).astype(np.float32)
            else:
                tensors[f"t{i}"] = rs.randint(-100, 100, size=(n, m)).astype(np.int64)
        _, loaded = read_container(write_container({"k": seed}, tensors))
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name], tensors[name])


class TestWriteValidation:
    def test_reserved_manifest_keys(self):
        for key in ("tensors", "blob_length", "blob_crc32"):
            with pytest.raises(FormatError):
                write_container({key: 1}, {})

    def test_unsupported_dtype(self):
        with pytest.raises(FormatError):
            write_container({}, {"bad": np.zeros(3, dtype=np.float64)})
        with pytest.raises(FormatError):
            write_container({}, {"bad": np.zeros(3, dtype=np.int32)})


def patch_manifest(data: bytes, mutate) -> bytes:
    """Rewrite the manifest JSON through `mutate`, fixing the length header."""
    mlen = struct.unpack_from("<Q", data, 8)[0]
    manifest = json.loads(data[16 : 16 + mlen])
    mutate(manifest)
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return data[:8] + struct.pack("<Q", len(payload)) + payload + data[16 + mlen :]


class TestReadTaxonomy:
    def test_short_header(self):
        with pytest.raises(FormatError, match="too short"):
            read_container(b"HST")
        with pytest.raises(FormatError):
            read_container(b"")

    def test_bad_magic(self):
        data = b"NOPE" + sample_container()[4:]
        with pytest.raises(FormatError, match="magic"):
            read_container(data)

    def test_bad_version(self):
        data = bytearray(sample_container())
        struct.pack_into("<I", data, 4, 99)
        with pytest.raises(FormatError, match="version"):
            read_container(bytes(data))

    def test_truncated_manifest(self):
        data = sample_container()
        mlen = struct.unpack_from("<Q", data, 8)[0]
        with pytest.raises(CorruptionError, match="truncated"):
            read_container(data[: 16 + mlen // 2])

    def test_truncated_blob(self):
        data = sample_container()
        with pytest.raises(CorruptionError):
            read_container(data[:-5])

    def test_invalid_manifest_json(self):
        data = sample_container()
        mlen = struct.unpack_from("<Q", data, 8)[0]
        broken = data[:16] + b"{" * mlen + data[16 + mlen :]
        with pytest.raises(FormatError, match="JSON"):
            read_container(broken)

    def test_manifest_not_an_object(self):
        payload = b"[1,2,3]"
        head = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(payload))
        data = head + payload + struct.pack("<I", zlib.crc32(b"")) + b""
        with pytest.raises(FormatError, match="object"):
            read_container(data)

    def test_blob_length_mismatch(self):
        data = patch_manifest(sample_container(), lambda m: m.update(blob_length=5))
        with pytest.raises(CorruptionError, match="length"):
            read_container(data)

    def test_wire_crc_mismatch(self):
        data = bytearray(sample_container())
        data[-1] ^= 0xFF  # flip a blob byte
        with pytest.raises(CorruptionError, match="checksum"):
            read_container(bytes(data))

    def test_manifest_crc_mismatch(self):
        data = patch_manifest(
            sample_container(), lambda m: m.update(blob_crc32=m["blob_crc32"] ^ 1)
        )
        with pytest.raises(CorruptionError, match="checksum"):
            read_container(data)

    def test_malformed_tensor_record(self):
        def drop_offset(m):
            del m["tensors"][0]["offset"]

        with pytest.raises(FormatError, match="malformed"):
            read_container(patch_manifest(sample_container(), drop_offset))

    def test_unknown_dtype(self):
        def rewrite(m):
            m["tensors"][0]["dtype"] = "f16"

        with pytest.raises(FormatError, match="dtype"):
            read_container(patch_manifest(sample_container(), rewrite))

    def test_length_shape_mismatch(self):
        def rewrite(m):
            m["tensors"][0]["shape"] = [1]

        with pytest.raises(CorruptionError, match="shape"):
            read_container(patch_manifest(sample_container(), rewrite))

    def test_offset_out_of_bounds(self):
        def rewrite(m):
            m["tensors"][-1]["offset"] = 10**9

        with pytest.raises(CorruptionError, match="outside"):
            read_container(patch_manifest(sample_container(), rewrite))

    def test_corruption_is_a_format_error(self):
        # callers that only distinguish "bad file" can catch the base class
        assert issubclass(CorruptionError, FormatError)
