"""EMB1 binary writer and self-check reader.

The wire format (little-endian):

    bytes 0-3  magic "EMB1"
    u32        version (= 1)
    u64        n
    u64        d
    u32        num_classes
    u32        flags (bit0: domains present, bit1: clean labels present)
    n*d f32    features, row-major
    n   i32    labels
    n   i32    domains       (if bit0)
    n   i32    clean labels  (if bit1)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError

_HEADER = struct.Struct("<4sIQQII")
_MAGIC = b"EMB1"
_FLAG_DOMAINS = 0x1
_FLAG_CLEAN = 0x2


def write_emb1(path, features, labels, num_classes, domains=None, clean_labels=None) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    y = np.ascontiguousarray(labels, dtype="<i4")
    n, d = feats.shape
    if y.shape != (n,):
        raise IntegrityError(f"labels shape {y.shape} does not match {n} feature rows")
    flags = 0
    parts = [b""]  # placeholder for the header
    if domains is not None:
        flags |= _FLAG_DOMAINS
    if clean_labels is not None:
        flags |= _FLAG_CLEAN
    parts[0] = _HEADER.pack(_MAGIC, 1, n, d, num_classes, flags)
    parts.append(feats.tobytes())
    parts.append(y.tobytes())
    if domains is not None:
        parts.append(np.ascontiguousarray(domains, dtype="<i4").tobytes())
    if clean_labels is not None:
        parts.append(np.ascontiguousarray(clean_labels, dtype="<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_emb1_header(path):
    """Return (n, d, num_classes, flags) for a quick self-check."""
    blob = Path(path).read_bytes()
    magic, version, n, d, num_classes, flags = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC or version != 1:
        raise IntegrityError(f"{path} is not a version-1 EMB1 file")
    return n, d, num_classes, flags
