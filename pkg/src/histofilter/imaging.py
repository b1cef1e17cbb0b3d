"""RGB decoding and deterministic sliding-window patch extraction.

The patch grid spreads max(1, round(dim / patch_size)) windows per axis evenly
between offset 0 and dim - patch_size, which reproduces the published geometry
for 700x460 images at patch size 150: five columns overlapping by 12-13 px and
three rows separated by a 5 px gap, 15 patches per image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .data_model import DatasetManifest, SampleRecord
from .errors import CorruptFile, GridMismatch, PatchTooLarge, UnsupportedFormat
from .util import round_half_away

SUPPORTED_SUFFIXES = {".png", ".tif", ".tiff", ".bmp", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster, pixels shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"expected (h, w, 3) uint8 array, got {p.shape} {p.dtype}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    x_positions: tuple[int, ...]
    y_positions: tuple[int, ...]

    def __post_init__(self):
        for positions in (self.x_positions, self.y_positions):
            if any(b <= a for a, b in zip(positions, positions[1:])):
                raise ValueError("grid positions must be strictly increasing")
            if positions and positions[0] < 0:
                raise ValueError("grid positions must be non-negative")

    @property
    def n_patches(self) -> int:
        return len(self.x_positions) * len(self.y_positions)


def _axis_positions(dim: int, patch_size: int) -> tuple[int, ...]:
    n = max(1, round_half_away(dim / patch_size))
    if n == 1:
        return (0,)
    span = dim - patch_size
    return tuple(round_half_away(i * span / (n - 1)) for i in range(n))


def compute_grid(width: int, height: int, patch_size: int) -> PatchGrid:
    """Evenly spaced window offsets anchored at 0 and dim - patch_size."""
    if patch_size < 1:
        raise ValueError("patch_size must be positive")
    if patch_size > min(width, height):
        raise PatchTooLarge(f"patch size {patch_size} exceeds image {width}x{height}")
    return PatchGrid(patch_size, _axis_positions(width, patch_size), _axis_positions(height, patch_size))


def extract_patches(image: RgbImage, grid: PatchGrid) -> list[tuple[tuple[int, int], RgbImage]]:
    """Pixel-exact crops in row-major order (y outer, x inner)."""
    s = grid.patch_size
    if grid.x_positions[-1] + s > image.width or grid.y_positions[-1] + s > image.height:
        raise GridMismatch(
            f"grid for patch size {s} does not fit image {image.width}x{image.height}"
        )
    out = []
    for y in grid.y_positions:
        for x in grid.x_positions:
            out.append(((x, y), RgbImage(image.pixels[y : y + s, x : x + s].copy())))
    return out


def decode_image(path: str | Path) -> RgbImage:
    """Decode to 8-bit RGB; grayscale replicated, alpha dropped, 16-bit rescaled."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise UnsupportedFormat(f"{path}: unsupported file type {suffix!r}")
    try:
        with Image.open(path) as img:
            img.load()
            arr = np.asarray(img)
    except UnidentifiedImageError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    except OSError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc

    if arr.dtype == np.uint16 or arr.dtype == np.int32:
        # 16-bit sources: linear rescale, full range maps onto 0..255
        arr = np.clip(arr, 0, 65535).astype(np.float64) * (255.0 / 65535.0)
        arr = np.rint(arr).astype(np.uint8)
    elif arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    elif arr.dtype != np.uint8:
        raise UnsupportedFormat(f"{path}: unsupported pixel type {arr.dtype}")

    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    elif arr.ndim == 3 and arr.shape[2] == 2:  # grayscale + alpha
        arr = np.repeat(arr[:, :, :1], 3, axis=2)
    elif arr.ndim != 3 or arr.shape[2] != 3:
        raise UnsupportedFormat(f"{path}: unsupported channel layout {arr.shape}")
    return RgbImage(np.ascontiguousarray(arr))


def save_png(image: RgbImage, path: str | Path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(Path(path), format="PNG")


def patch_sample_id(image_id: str, x: int, y: int) -> str:
    return f"{image_id}_y{y}_x{x}"


def patch_records(record: SampleRecord, grid: PatchGrid) -> list[SampleRecord]:
    """Patch-level manifest rows for one whole-image record, in (y, x) order."""
    out = []
    for y in grid.y_positions:
        for x in grid.x_positions:
            out.append(
                dc_replace(
                    record,
                    sample_id=patch_sample_id(record.image_id, x, y),
                    patch_origin=(x, y),
                )
            )
    return out


def patch_manifest_from_size(
    manifest: DatasetManifest, patch_size: int, image_size: tuple[int, int]
) -> DatasetManifest:
    """Expand whole-image records to patch records by grid arithmetic alone.

    All images are assumed to share image_size; no file is opened. Records that
    already carry a patch origin, and single-window images, pass through
    unchanged so ids always line up with the feature extractor's.
    """
    grid = compute_grid(image_size[0], image_size[1], patch_size)
    records: list[SampleRecord] = []
    for r in manifest.records:
        if r.is_patch or grid.n_patches == 1:
            records.append(r)
        else:
            records.extend(patch_records(r, grid))
    return DatasetManifest(tuple(records), manifest.dataset_kind)


def expand_manifest(manifest: DatasetManifest, patch_size: int) -> DatasetManifest:
    """Patch-level manifest with each image decoded for its true size.

    Same id rules as the feature extractor: patch records and single-window
    images keep their own sample_id, larger images expand to grid patches.
    """
    records: list[SampleRecord] = []
    for r in manifest.records:
        if r.is_patch:
            records.append(r)
            continue
        image = decode_image(r.source_path)
        grid = compute_grid(image.width, image.height, patch_size)
        if grid.n_patches == 1:
            records.append(r)
        else:
            records.extend(patch_records(r, grid))
    return DatasetManifest(tuple(records), manifest.dataset_kind)
