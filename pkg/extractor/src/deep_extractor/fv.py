"""Writer for the FV01 feature file format.

Little-endian: magic `FV01`, u32 row count, u32 dim, then per row a u16 id
length, the UTF-8 id, and dim float32 values. Kept byte-compatible with the
consumer's reader; the write goes through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"FV01"
_HEADER = struct.Struct("<4sII")
_IDLEN = struct.Struct("<H")


def write_fv01(sample_ids: list[str], values: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    if values.ndim != 2 or values.shape[0] != len(sample_ids):
        raise ValueError("values must be (n_ids, dim)")
    rows = np.ascontiguousarray(values, dtype="<f4")
    payload = bytearray(_HEADER.pack(MAGIC, len(sample_ids), rows.shape[1]))
    for i, sid in enumerate(sample_ids):
        encoded = sid.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"sample_id too long for format: {sid[:40]}...")
        payload += _IDLEN.pack(len(encoded))
        payload += encoded
        payload += rows[i].tobytes()
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
