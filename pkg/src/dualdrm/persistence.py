"""Binary container format shared by roadmap and dual-roadmap files, plus the
compatibility check binding a roadmap to the scenarios it can serve.

Layout (all integers little-endian)::

    offset size  field
    0      8     magic  b"DUALDRM\\0"
    8      4     format_version (u32)
    12     4     payload kind (u32): 1 roadmap, 2 dual roadmap
    16     8     checksum: blake2b-64 over the payload bytes (u64)
    24     8     compatibility hash (grid + padding + metric weights, u64)
    32     8     payload length in bytes (u64)
    40     8     reserved, zero
    48     ...   payload: a sequence of blocks

    block := tag (4 ASCII bytes) | dtype (1 byte: b'i' int64, b'f' float64,
             b'b' raw bytes) | 3 zero bytes | count (u64) | data

See docs/format.md for a hex-annotated example.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, MagicError, TruncatedFileError, VersionError

MAGIC = b"DUALDRM\x00"
FORMAT_VERSION = 1
KIND_ROADMAP = 1
KIND_DUAL = 2

_HEADER = struct.Struct("<8sIIQQQQ")
_BLOCK = struct.Struct("<4sc3xQ")
_DTYPES = {b"i": np.dtype("<i8"), b"f": np.dtype("<f8"), b"b": np.dtype("u1")}


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


# -- blocks ------------------------------------------------------------------

def encode_blocks(blocks) -> bytes:
    """``blocks`` is an iterable of (tag, value) with value an int/float ndarray,
    bytes, or a JSON-able dict (stored as canonical JSON bytes)."""
    out = bytearray()
    for tag, value in blocks:
        tag = tag.encode() if isinstance(tag, str) else tag
        if len(tag) != 4:
            raise ValueError(f"block tag {tag!r} must be 4 bytes")
        if isinstance(value, dict):
            value = canonical_json(value)
        if isinstance(value, (bytes, bytearray)):
            code, raw, count = b"b", bytes(value), len(value)
        else:
            arr = np.asarray(value)
            code = b"f" if arr.dtype.kind == "f" else b"i"
            arr = np.ascontiguousarray(arr.ravel(), dtype=_DTYPES[code])
            raw, count = arr.tobytes(), arr.size
        out += _BLOCK.pack(tag, code, count)
        out += raw
    return bytes(out)


def decode_blocks(payload: bytes) -> list:
    """Inverse of :func:`encode_blocks`; arrays come back flat and read-only."""
    blocks = []
    pos = 0
    view = memoryview(payload)
    while pos < len(payload):
        if pos + _BLOCK.size > len(payload):
            raise TruncatedFileError("block header runs past end of payload")
        tag, code, count = _BLOCK.unpack_from(payload, pos)
        pos += _BLOCK.size
        if code not in _DTYPES:
            raise FormatError(f"unknown block dtype {code!r} in block {tag!r}")
        nbytes = count * _DTYPES[code].itemsize
        if pos + nbytes > len(payload):
            raise TruncatedFileError(f"block {tag.decode(errors='replace')} truncated")
        raw = view[pos:pos + nbytes]
        pos += nbytes
        if code == b"b":
            blocks.append((tag.decode(errors="replace"), bytes(raw)))
        else:
            arr = np.frombuffer(raw, dtype=_DTYPES[code]).astype(_DTYPES[code].newbyteorder("="))
            arr.setflags(write=False)
            blocks.append((tag.decode(errors="replace"), arr))
    return blocks


class BlockReader:
    """Sequential accessor that insists on the expected tag order."""

    def __init__(self, blocks):
        self._blocks = list(blocks)
        self._pos = 0

    def take(self, tag: str):
        if self._pos >= len(self._blocks):
            raise FormatError(f"missing block {tag}")
        got, value = self._blocks[self._pos]
        if got != tag:
            raise FormatError(f"expected block {tag}, found {got}")
        self._pos += 1
        return value

    def take_json(self, tag: str) -> dict:
        raw = self.take(tag)
        if not isinstance(raw, bytes):
            raise FormatError(f"block {tag} is not a byte block")
        try:
            return json.loads(raw.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"block {tag} holds invalid JSON") from exc

    def take_array(self, tag: str, dtype_kind: str = "i") -> np.ndarray:
        value = self.take(tag)
        if isinstance(value, bytes) or value.dtype.kind != dtype_kind:
            raise FormatError(f"block {tag} has the wrong dtype")
        return value

    def done(self):
        if self._pos != len(self._blocks):
            raise FormatError(f"{len(self._blocks) - self._pos} unexpected trailing blocks")


# -- file container ------------------------------------------------------------

@dataclass(frozen=True)
class FileHeader:
    format_version: int
    kind: int
    checksum: int
    compat_hash: int
    payload_length: int


def pack_file(kind: int, compat_hash: int, payload: bytes, version: int = FORMAT_VERSION) -> bytes:
    header = _HEADER.pack(MAGIC, version, kind, checksum64(payload), compat_hash, len(payload), 0)
    return header + payload


def unpack_file(data: bytes, expected_kind: int | None = None):
    """Validate and split a container; returns ``(FileHeader, payload)``.

    Checks run in a fixed order so each corruption maps to one error type:
    magic, version, reserved field, truncation, checksum, kind.
    """
    if len(data) < _HEADER.size:
        if data[:len(MAGIC)] != MAGIC[:len(data)]:
            raise MagicError("not a dualdrm file")
        raise TruncatedFileError("file shorter than its header")
    magic, version, kind, checksum, compat, length, reserved = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MagicError("not a dualdrm file (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionError(f"file format version {version}, reader supports {FORMAT_VERSION}")
    if reserved != 0:
        raise FormatError("reserved header field is not zero")
    payload = data[_HEADER.size:]
    if len(payload) < length:
        raise TruncatedFileError(f"payload truncated: {len(payload)} of {length} bytes")
    if len(payload) > length:
        raise FormatError("trailing bytes after payload")
    if checksum64(payload) != checksum:
        raise ChecksumError("payload checksum mismatch")
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"payload kind {kind}, expected {expected_kind}")
    return FileHeader(version, kind, checksum, compat, length), payload


def write_file(path, kind, compat_hash, payload):
    Path(path).write_bytes(pack_file(kind, compat_hash, payload))


def read_file(path, expected_kind=None):
    return unpack_file(Path(path).read_bytes(), expected_kind)


# -- compatibility ----------------------------------------------------------------

@dataclass(frozen=True)
class CompatMeta:
    """The parameters node pruning soundness depends on."""

    grid: dict
    padding: float | None = None
    metric_weights: tuple | None = None

    def to_dict(self) -> dict:
        return {"grid": self.grid, "padding": self.padding,
                "metric_weights": None if self.metric_weights is None else list(self.metric_weights)}

    def hash64(self) -> int:
        return checksum64(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class Compatibility:
    compatible: bool
    mismatches: tuple = field(default_factory=tuple)

    def __bool__(self):
        return self.compatible

    def detail(self) -> str:
        return "compatible" if self.compatible else "mismatch in " + ", ".join(self.mismatches)


def check_compat_hash(header: FileHeader, meta: CompatMeta):
    """The header hash must match the metadata stored in the payload."""
    if header.compat_hash != meta.hash64():
        raise FormatError("header compatibility hash does not match the stored metadata")


def hash_compatibility(roadmap_meta: CompatMeta, scenario_meta: CompatMeta) -> Compatibility:
    """Compare grid spec, voxel size, padding and metric weights exactly.

    A scenario may leave ``padding`` or ``metric_weights`` as ``None`` to accept
    whatever the roadmap was built with.
    """
    bad = []
    rg, sg = roadmap_meta.grid, scenario_meta.grid
    if list(rg.get("min_corner", [])) != list(sg.get("min_corner", [])):
        bad.append("min_corner")
    if list(rg.get("dims", [])) != list(sg.get("dims", [])):
        bad.append("dims")
    if rg.get("voxel_size") != sg.get("voxel_size"):
        bad.append("voxel_size")
    if scenario_meta.padding is not None and scenario_meta.padding != roadmap_meta.padding:
        bad.append("padding")
    if (scenario_meta.metric_weights is not None
            and tuple(scenario_meta.metric_weights) != tuple(roadmap_meta.metric_weights or ())):
        bad.append("metric_weights")
    return Compatibility(not bad, tuple(bad))
