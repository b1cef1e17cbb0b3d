"""Minimal manifest reader: sample ids and image paths only.

The consumer-side manifest carries more columns (patient, label, patch
origin); the extractor needs just `sample_id` and `source_path`. Patch rows
are expected to reference cropped patch files, not windows into a parent
image, so every row maps to exactly one decodable file. Relative paths
resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import MalformedManifest

REQUIRED = ("sample_id", "source_path")


def read_manifest(path: str | Path) -> list[tuple[str, Path]]:
    path = Path(path)
    entries: list[tuple[str, Path]] = []
    seen: set[str] = set()
    base = path.resolve().parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedManifest(f"{path}: empty file, expected a CSV header")
        missing = [c for c in REQUIRED if c not in reader.fieldnames]
        if missing:
            raise MalformedManifest(f"{path}: missing column(s) {', '.join(missing)}")
        for line_no, row in enumerate(reader, start=2):
            sid = (row.get("sample_id") or "").strip()
            src = (row.get("source_path") or "").strip()
            if not sid or not src:
                raise MalformedManifest(f"{path}:{line_no}: empty sample_id or source_path")
            if sid in seen:
                raise MalformedManifest(f"{path}:{line_no}: duplicate sample_id {sid!r}")
            seen.add(sid)
            p = Path(src)
            entries.append((sid, p if p.is_absolute() else (base / p).resolve()))
    return entries
