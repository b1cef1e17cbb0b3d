"""Feature matrix persistence: FV01 binary files and a CSV mirror.

FV01, little-endian: magic `FV01`, u32 row count, u32 dim, then per row a
u16 id length, the UTF-8 id, and dim float32 values. Values are stored and
held at 32-bit precision; writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DuplicateSampleId,
    JoinOrphans,
    MalformedRow,
    MissingColumn,
    NonFinite,
    Truncated,
)

MAGIC = b"FV01"
_HEADER = struct.Struct("<4sII")
_IDLEN = struct.Struct("<H")


@dataclass(frozen=True)
class FeatureMatrix:
    sample_ids: tuple[str, ...]
    values: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError("values must be 2-d")
        if v.dtype != np.float32:
            object.__setattr__(self, "values", v.astype(np.float32))
            v = self.values
        if len(self.sample_ids) != v.shape[0]:
            raise ValueError("sample_ids and values row count differ")
        if v.shape[1] < 1:
            raise ValueError("feature dim must be at least 1")
        seen = set()
        for sid in self.sample_ids:
            if not sid:
                raise ValueError("empty sample_id")
            if sid in seen:
                raise DuplicateSampleId(sid)
            seen.add(sid)
        if not np.isfinite(v).all():
            raise NonFinite("feature values contain NaN or infinity")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.sample_ids)

    def row_index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.sample_ids)}


def write_features(matrix: FeatureMatrix, path: str | Path) -> None:
    path = Path(path)
    payload = bytearray(_HEADER.pack(MAGIC, len(matrix), matrix.dim))
    rows = np.ascontiguousarray(matrix.values, dtype="<f4")
    for i, sid in enumerate(matrix.sample_ids):
        encoded = sid.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"sample_id too long for format: {sid[:40]}...")
        payload += _IDLEN.pack(len(encoded))
        payload += encoded
        payload += rows[i].tobytes()
    _atomic_write_bytes(path, bytes(payload))


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise Truncated(f"{path}: shorter than the header")
    magic, n, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {MAGIC!r}")
    if dim < 1:
        raise Truncated(f"{path}: dim field is {dim}")
    offset = _HEADER.size
    ids: list[str] = []
    values = np.empty((n, dim), dtype=np.float32)
    row_bytes = 4 * dim
    for row in range(n):
        if offset + _IDLEN.size > len(data):
            raise Truncated(f"{path}: row {row} id length cut short")
        (id_len,) = _IDLEN.unpack_from(data, offset)
        offset += _IDLEN.size
        if offset + id_len + row_bytes > len(data):
            raise Truncated(f"{path}: row {row} cut short")
        ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        values[row] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += row_bytes
    if offset != len(data):
        raise Truncated(f"{path}: {len(data) - offset} trailing bytes")
    return FeatureMatrix(tuple(ids), values)


def export_features_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    """`sample_id,v0,...`; floats rendered as shortest round-trip f32 strings."""
    path = Path(path)
    header = ["sample_id"] + [f"v{i}" for i in range(matrix.dim)]
    lines = [",".join(header)]
    for i, sid in enumerate(matrix.sample_ids):
        cells = [sid] + [str(v) for v in matrix.values[i]]
        lines.append(",".join(cells))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def import_features_csv(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("empty file, expected a header row") from None
        expected = ["sample_id"] + [f"v{i}" for i in range(len(header) - 1)]
        if header != expected or len(header) < 2:
            raise MissingColumn(f"{path}: header must be sample_id,v0,...,vN")
        dim = len(header) - 1
        ids: list[str] = []
        rows: list[np.ndarray] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise MalformedRow(line_no, f"expected {dim + 1} cells, got {len(row)}")
            if not row[0]:
                raise MalformedRow(line_no, "empty sample_id")
            try:
                vals = np.array(row[1:], dtype=np.float32)
            except ValueError as exc:
                raise MalformedRow(line_no, str(exc)) from None
            if not np.isfinite(vals).all():
                raise MalformedRow(line_no, "non-finite value")
            ids.append(row[0])
            rows.append(vals)
    values = np.vstack(rows) if rows else np.empty((0, dim), dtype=np.float32)
    return FeatureMatrix(tuple(ids), values)


def align_features(matrix: FeatureMatrix, sample_ids) -> np.ndarray:
    """Rows of `matrix` reordered to `sample_ids`; missing ids are an error.

    Feature rows not referenced by sample_ids are ignored, so one feature file
    can serve many manifest subsets.
    """
    index = matrix.row_index()
    orphans = [sid for sid in sample_ids if sid not in index]
    if orphans:
        raise JoinOrphans(sorted(orphans))
    picks = np.array([index[sid] for sid in sample_ids], dtype=np.intp)
    return matrix.values[picks].astype(np.float64)
