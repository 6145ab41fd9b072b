"""Tensor container files.

Layout::

    b"PMTNSR01"                       8-byte magic
    uint64 little-endian              manifest length in bytes
    manifest                          UTF-8 JSON
    payload                           raw little-endian float32 blocks

The manifest holds ``meta`` (free-form JSON) and ``tensors``: a list of
``{"name", "shape", "dtype", "offset", "nbytes"}`` with offsets relative to
the start of the payload. Writes go to a temporary file that is renamed
into place, so readers never observe a partial file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Dict, Mapping, Tuple

import numpy as np

MAGIC = b"PMTNSR01"
DTYPE = "<f4"


class ContainerError(ValueError):
    pass


def write_container(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "dtype": DTYPE,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")

    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(manifest)))
            fh.write(manifest)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read and fully validate a container before returning anything."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ContainerError(f"{path}: not a tensor container (bad magic)")
    if len(raw) < 16:
        raise ContainerError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + mlen > len(raw):
        raise ContainerError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
        entries = manifest["tensors"]
        meta = manifest.get("meta", {})
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ContainerError(f"{path}: corrupted manifest ({exc})") from None
    payload = memoryview(raw)[16 + mlen:]

    out: Dict[str, np.ndarray] = {}
    expected_end = 0
    for entry in entries:
        try:
            name, shape, offset, nbytes = entry["name"], entry["shape"], entry["offset"], entry["nbytes"]
            dtype = np.dtype(entry["dtype"])
        except (KeyError, TypeError) as exc:
            raise ContainerError(f"{path}: corrupted manifest entry {entry!r}") from exc
        count = int(np.prod(shape, dtype=np.int64))
        if count * dtype.itemsize != nbytes or offset != expected_end:
            raise ContainerError(f"{path}: size mismatch for {name!r}")
        if offset + nbytes > len(payload):
            raise ContainerError(f"{path}: truncated payload at {name!r}")
        if name in out:
            raise ContainerError(f"{path}: duplicate tensor {name!r}")
        out[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
        expected_end = offset + nbytes
    if expected_end != len(payload):
        raise ContainerError(f"{path}: payload has {len(payload) - expected_end} trailing bytes")
    return meta, out
