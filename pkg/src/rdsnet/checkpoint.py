"""RDSCKPT1 checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic b"RDSCKPT1"
    8 bytes   uint64 manifest length L
    L bytes   UTF-8 JSON manifest {"entries": [...], "meta": {...}}
    padding   zero bytes up to an 8-byte boundary
    data      raw little-endian arrays, each at its manifest offset

Each manifest entry is ``{"name", "shape", "dtype", "offset", "nbytes"}``
with ``offset`` relative to the start of the data region. The manifest is
written with sorted keys and entries are ordered by name, so identical
state gives identical bytes.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"RDSCKPT1"


class CheckpointError(ValueError):
    pass


def encode(arrays, meta=None):
    entries = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<Q", len(manifest)) + manifest
    head += b"\0" * (-len(head) % 8)
    return head + b"".join(chunks)


def decode(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not an RDSCKPT1 checkpoint (bad magic bytes)")
    (length,) = struct.unpack("<Q", blob[8:16])
    manifest = json.loads(blob[16:16 + length].decode("utf-8"))
    start = 16 + length
    start += -start % 8
    arrays = {}
    for e in manifest["entries"]:
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(blob):
            raise CheckpointError(f"checkpoint truncated inside entry {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(blob[lo:hi], dtype=e["dtype"]).reshape(e["shape"]).copy()
    return arrays, manifest["meta"]


def atomic_write_bytes(path, data):
    """Write to a temporary sibling and rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, arrays, meta=None):
    atomic_write_bytes(path, encode(arrays, meta))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
