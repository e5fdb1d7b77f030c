"""Binary container shared by dataset files and model checkpoints.

Layout::

    magic      8 bytes   b"SEISMOC\\n"
    hlen       uint32 LE length of the JSON header
    hcrc       uint32 LE CRC32 of the JSON header bytes
    header     UTF-8 JSON: {"version", "kind", "meta", "arrays": [...]}
    payload    arrays packed back to back as little-endian float64

Each entry in ``arrays`` carries ``name``, ``shape``, ``offset`` (relative to
the payload start), ``nbytes`` and ``crc32``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ChecksumMismatch, ParseError, VersionMismatch

MAGIC = b"SEISMOC\n"
VERSION = 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_container(
    path: str | Path,
    kind: str,
    meta: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
    *,
    version: int = VERSION,
) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(np.shape(arr)),
                "offset": offset,
                "nbytes": len(data),
                "crc32": zlib.crc32(data),
            }
        )
        blobs.append(data)
        offset += len(data)
    header = canonical_json(
        {"version": version, "kind": kind, "meta": meta, "arrays": entries}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(header), zlib.crc32(header)))
        fh.write(header)
        for data in blobs:
            fh.write(data)


def read_container(
    path: str | Path, kind: str | None = None
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read a container, verifying version and every checksum.

    Returns ``(meta, arrays)``.
    """
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path} is not a seismo container (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise ParseError(f"{path} is truncated")
    hlen, hcrc = struct.unpack("<II", raw[pos : pos + 8])
    pos += 8
    header_bytes = raw[pos : pos + hlen]
    if len(header_bytes) != hlen or zlib.crc32(header_bytes) != hcrc:
        raise ChecksumMismatch(f"{path}: header checksum mismatch")
    header = json.loads(header_bytes.decode("utf-8"))
    pos += hlen

    version = header.get("version")
    if version != VERSION:
        raise VersionMismatch(
            f"{path}: container version {version} is not supported "
            f"(this build reads version {VERSION})"
        )
    if kind is not None and header.get("kind") != kind:
        raise ParseError(f"{path}: expected a {kind!r} container, found {header.get('kind')!r}")

    arrays = {}
    for entry in header["arrays"]:
        start = pos + entry["offset"]
        data = raw[start : start + entry["nbytes"]]
        if len(data) != entry["nbytes"] or zlib.crc32(data) != entry["crc32"]:
            raise ChecksumMismatch(f"{path}: checksum mismatch in array {entry['name']!r}")
        arr = np.frombuffer(data, dtype="<f8").astype(np.float64)
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    return header["meta"], arrays
