"""Binary persistence primitives and the on-disk bundle layout.

Component serializers (tree, hash tables, partition, quantizer) emit one
self-describing byte string each: a 4-byte magic, a format version, a
component kind tag, then little-endian fields in a fixed order.  A bundle
is a directory holding those components as files plus a ``manifest.json``
with sha256 checksums.  Writing the same index twice yields identical
bytes: nothing here records timestamps or hostnames.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"EANN"
FORMAT_VERSION = 1

KIND_FLAT = 1
KIND_TREE = 2
KIND_LSH = 3
KIND_PARTITION = 4
KIND_PQ = 5
KIND_KDTREE = 6

_KIND_NAMES = {
    KIND_FLAT: "flat",
    KIND_TREE: "tree",
    KIND_LSH: "lsh",
    KIND_PARTITION: "partition",
    KIND_PQ: "pq",
    KIND_KDTREE: "kdtree",
}

MANIFEST_NAME = "manifest.json"


class SerializationError(ValueError):
    """Corrupt, truncated, or version-incompatible serialized data."""


class ByteWriter:
    def __init__(self) -> None:
        self._parts = bytearray()

    def _pack(self, fmt: str, value) -> None:
        self._parts += struct.pack(fmt, value)

    def u8(self, v: int) -> None:
        self._pack("<B", v)

    def u16(self, v: int) -> None:
        self._pack("<H", v)

    def u32(self, v: int) -> None:
        self._pack("<I", v)

    def u64(self, v: int) -> None:
        self._pack("<Q", v)

    def i64(self, v: int) -> None:
        self._pack("<q", v)

    def f64(self, v: float) -> None:
        self._pack("<d", v)

    def raw(self, data: bytes) -> None:
        self._parts += data

    def array(self, arr: np.ndarray, dtype: str) -> None:
        """Raw array payload; the caller is responsible for writing counts."""
        self._parts += np.ascontiguousarray(arr).astype(dtype).tobytes()

    def getvalue(self) -> bytes:
        return bytes(self._parts)


class ByteReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._offset = 0

    def _unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self._offset + size > len(self._data):
            raise SerializationError(
                f"truncated data: need {size} bytes at offset {self._offset}, "
                f"have {len(self._data) - self._offset}"
            )
        out = struct.unpack_from(fmt, self._data, self._offset)[0]
        self._offset += size
        return out

    def u8(self) -> int:
        return self._unpack("<B")

    def u16(self) -> int:
        return self._unpack("<H")

    def u32(self) -> int:
        return self._unpack("<I")

    def u64(self) -> int:
        return self._unpack("<Q")

    def i64(self) -> int:
        return self._unpack("<q")

    def f64(self) -> float:
        return self._unpack("<d")

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype)
        size = count * dt.itemsize
        if self._offset + size > len(self._data):
            raise SerializationError(
                f"truncated array: need {size} bytes at offset {self._offset}"
            )
        arr = np.frombuffer(self._data, dtype=dt, count=count,
                            offset=self._offset)
        self._offset += size
        return arr

    def expect_end(self) -> None:
        if self._offset != len(self._data):
            raise SerializationError(
                f"{len(self._data) - self._offset} unexpected trailing bytes"
            )


def write_header(w: ByteWriter, kind: int) -> None:
    w.raw(MAGIC)
    w.u16(FORMAT_VERSION)
    w.u16(kind)


def read_header(r: ByteReader, expected_kind: int) -> None:
    magic = r.array(4, "u1").tobytes()
    if magic != MAGIC:
        raise SerializationError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u16()
    if version != FORMAT_VERSION:
        raise SerializationError(
            f"format version {version} unsupported (reader supports "
            f"{FORMAT_VERSION})"
        )
    kind = r.u16()
    if kind != expected_kind:
        have = _KIND_NAMES.get(kind, str(kind))
        want = _KIND_NAMES.get(expected_kind, str(expected_kind))
        raise SerializationError(f"component kind is {have}, expected {want}")


# ---------------------------------------------------------------------------
# Bundles


@dataclass
class Bundle:
    kind: str
    config: dict
    build_report: dict
    files: dict[str, bytes] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def save_bundle(directory, kind: str, config: dict, files: dict[str, bytes],
                build_report: dict | None = None) -> Path:
    """Write component files plus a checksummed manifest; return its path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, blob in files.items():
        if "/" in name or name == MANIFEST_NAME:
            raise ValueError(f"illegal component file name {name!r}")
        (out / name).write_bytes(blob)
        entries[name] = {
            "bytes": len(blob),
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "build_report": build_report or {},
        "files": entries,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(directory) -> Bundle:
    """Read a bundle directory back, verifying every checksum."""
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise SerializationError(f"{manifest_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SerializationError(f"{manifest_path}: invalid json: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise SerializationError(
            f"{manifest_path}: format version {version} unsupported"
        )
    files: dict[str, bytes] = {}
    for name, entry in manifest.get("files", {}).items():
        blob_path = root / name
        if not blob_path.is_file():
            raise SerializationError(f"{blob_path} listed in manifest but missing")
        blob = blob_path.read_bytes()
        if len(blob) != entry.get("bytes"):
            raise SerializationError(
                f"{blob_path}: size {len(blob)} differs from manifest "
                f"{entry.get('bytes')}"
            )
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry.get("sha256"):
            raise SerializationError(f"{blob_path}: sha256 mismatch")
        files[name] = blob
    return Bundle(
        kind=manifest.get("kind", ""),
        config=manifest.get("config", {}),
        build_report=manifest.get("build_report", {}),
        files=files,
        manifest=manifest,
    )
