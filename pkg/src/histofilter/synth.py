"""Seeded synthetic corpora standing in for the proprietary datasets.

Two flavors share one generator: a tumor-style corpus (patients x images, each
patient carrying one texture class whose name encodes benign or malign) and a
tissue-style source corpus (independent single-tile samples per class).
Textures are Gaussian noise over a base color plus seeded micro-blobs; target
images additionally receive bright background blobs covering roughly
`irrelevant_fraction` of the area, carrying small slide-debris specks whose
(density, radius) signature is drawn once per patient. Because background
placement is known, each patch's ground-truth relevance (background overlap at
most half the patch) is emitted exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data_model import (
    MAGNIFICATIONS,
    DatasetManifest,
    SampleRecord,
    binary_from_class,
    write_manifest,
)
from .errors import IoError
from .imaging import RgbImage, compute_grid, patch_sample_id, save_png
from .util import derive_rng

BACKGROUND_CLASS = "background"
BACKGROUND_COLOR = (245, 245, 245)
BACKGROUND_SIGMA = 2.0
# slide-debris specks in background regions; tumor patients each draw one
# (density, radius) signature from these ranges, source tiles span a slightly
# wider envelope so a filter trained on them generalizes to every patient
DEBRIS_DENSITY = (0.3, 3.0)  # specks per 10,000 px
DEBRIS_RADIUS = (1.0, 2.5)  # mean speck radius, px
SOURCE_DEBRIS_DENSITY = (0.0, 3.5)
SOURCE_DEBRIS_RADIUS = (0.8, 2.8)


@dataclass(frozen=True)
class TextureClass:
    name: str
    base_color: tuple[int, int, int]
    noise_sigma: float
    blob_density: float  # expected micro-blobs per 10,000 px
    blob_radius: float  # mean micro-blob radius, px
    # source tiles of this class are occluded by the global background texture
    # at a coverage drawn uniformly from this range; (0, 0) means pure tiles
    background_cover: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class SynthSpec:
    n_patients: int
    images_per_patient: int
    image_size: tuple[int, int]  # (width, height)
    texture_classes: tuple[TextureClass, ...]
    irrelevant_fraction: float
    seed: int
    kind: str = "tumor_target"
    patch_size: int = 150
    magnification: str = "40x"

    def __post_init__(self):
        if not 0.0 <= self.irrelevant_fraction <= 1.0:
            raise ValueError("irrelevant_fraction outside [0, 1]")
        if len(self.texture_classes) < 2:
            raise ValueError("need at least two texture classes")
        if self.n_patients < 1 or self.images_per_patient < 1:
            raise ValueError("need at least one patient and one image per patient")
        if self.kind not in ("tumor_target", "tissue_source"):
            raise ValueError(f"bad kind {self.kind!r}")
        if self.magnification not in MAGNIFICATIONS:
            raise ValueError(f"bad magnification {self.magnification!r}")
        w, h = self.image_size
        if self.kind == "tumor_target" and self.patch_size > min(w, h):
            raise ValueError("patch_size exceeds image_size")


def _render_texture(tc: TextureClass, w: int, h: int, rng: np.random.Generator) -> np.ndarray:
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = np.asarray(tc.base_color, dtype=np.float64)
    n_blobs = int(round(tc.blob_density * w * h / 1e4))
    if n_blobs > 0:
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(n_blobs):
            cx = rng.uniform(0, w)
            cy = rng.uniform(0, h)
            radius = tc.blob_radius * rng.uniform(0.6, 1.4)
            shift = rng.normal(0.0, 30.0, size=3)
            disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
            img[disc] += shift
    img += rng.normal(0.0, tc.noise_sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _render_backdrop(
    w: int, h: int, rng: np.random.Generator, debris_density: float, debris_radius: float
) -> np.ndarray:
    """Bright background with slide-debris specks at the given signature.

    Specks are what make backgrounds harmful rather than merely uninformative:
    a classifier can memorize the per-patient speck signature of its training
    patients, and that shortcut breaks on held-out patients. A global color
    shift would not work here because per-channel thresholding erases it from
    the descriptor; the signature has to live in binary structure.
    """
    tc = TextureClass("backdrop", BACKGROUND_COLOR, BACKGROUND_SIGMA, debris_density, debris_radius)
    return _render_texture(tc, w, h, rng)


def _background_mask(
    w: int, h: int, fraction: float, patch_size: int, grid, rng: np.random.Generator
) -> np.ndarray:
    """Background discs for a target image, one per chosen grid slot.

    Discs are patch-scaled and jittered around patch centers, so each covered
    patch is nearly fully background and its neighbors only catch small
    spill-over. The texture descriptor responds to presence of background, not
    its exact area, so mid-covered patches would carry no learnable label;
    lattice-centered blobs keep the ground truth crisply two-sided.
    """
    mask = np.zeros((h, w), dtype=bool)
    if fraction <= 0.0:
        return mask
    slots = [(x, y) for y in grid.y_positions for x in grid.x_positions]
    want = fraction * len(slots)
    k = int(want) + (1 if rng.uniform() < want - int(want) else 0)
    k = min(k, len(slots))
    if k == 0:
        return mask
    chosen = rng.choice(len(slots), size=k, replace=False)
    yy, xx = np.mgrid[0:h, 0:w]
    for idx in sorted(int(i) for i in chosen):
        x, y = slots[idx]
        cx = x + patch_size / 2.0 + rng.uniform(-0.07, 0.07) * patch_size
        cy = y + patch_size / 2.0 + rng.uniform(-0.07, 0.07) * patch_size
        radius = patch_size * rng.uniform(0.62, 0.70)
        mask |= (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    return mask


def _occlusion_mask(
    w: int, h: int, coverage: float, rng: np.random.Generator
) -> np.ndarray:
    """Random discs placed until roughly `coverage` of a source tile is hit.

    Disc radius scales with the requested coverage so a single placement
    cannot badly overshoot a small target fraction.
    """
    mask = np.zeros((h, w), dtype=bool)
    if coverage <= 0.0:
        return mask
    radius = min(w, h) * max(0.08, 0.42 * coverage)
    disc_area = math.pi * radius * radius
    max_discs = max(1, int(4.0 * coverage * w * h / disc_area) + 4)
    yy, xx = np.mgrid[0:h, 0:w]
    placed = 0
    while mask.mean() < coverage and placed < max_discs:
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        mask |= (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
        placed += 1
    return mask


def generate(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Write PNGs, manifest.csv, and (for tumor corpora) relevance.csv.

    Per-image RNG streams are derived from the spec seed and the image index,
    so the corpus is reproducible regardless of generation order.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {image_dir}: {exc}") from exc

    if spec.kind == "tumor_target":
        manifest, relevance = _generate_target(spec, image_dir)
        _write_relevance(relevance, out_dir / "relevance.csv")
    else:
        manifest = _generate_source(spec, image_dir)
    write_manifest(_with_relative_paths(manifest, out_dir), out_dir / "manifest.csv")
    return manifest


def _with_relative_paths(manifest: DatasetManifest, out_dir: Path) -> DatasetManifest:
    records = tuple(
        replace(r, source_path=str(Path(r.source_path).relative_to(out_dir)))
        for r in manifest.records
    )
    return DatasetManifest(records, manifest.dataset_kind)


def _generate_target(spec: SynthSpec, image_dir: Path):
    w, h = spec.image_size
    grid = compute_grid(w, h, spec.patch_size)
    records: list[SampleRecord] = []
    relevance: list[tuple[str, bool]] = []
    for pi in range(spec.n_patients):
        tc = spec.texture_classes[pi % len(spec.texture_classes)]
        patient_id = f"p{pi:03d}"
        patient_rng = derive_rng(spec.seed, 12, pi)
        debris = (
            patient_rng.uniform(*DEBRIS_DENSITY),
            patient_rng.uniform(*DEBRIS_RADIUS),
        )
        for ii in range(spec.images_per_patient):
            image_index = pi * spec.images_per_patient + ii
            rng = derive_rng(spec.seed, 10, image_index)
            image_id = f"{patient_id}_img{ii:02d}"
            tile = _render_texture(tc, w, h, rng)
            bg = _background_mask(
                w, h, spec.irrelevant_fraction, spec.patch_size, grid, rng
            )
            if bg.any():
                backdrop = _render_backdrop(w, h, rng, *debris)
                tile[bg] = backdrop[bg]
            path = image_dir / f"{image_id}.png"
            _save(tile, path)
            records.append(
                SampleRecord(
                    sample_id=image_id,
                    patient_id=patient_id,
                    image_id=image_id,
                    magnification=spec.magnification,
                    class_label=tc.name,
                    source_path=str(path),
                    binary_label=binary_from_class(tc.name),
                )
            )
            s = spec.patch_size
            for y in grid.y_positions:
                for x in grid.x_positions:
                    overlap = float(bg[y : y + s, x : x + s].mean())
                    relevance.append((patch_sample_id(image_id, x, y), overlap <= 0.5))
    return DatasetManifest(tuple(records), "tumor_target"), relevance


def _generate_source(spec: SynthSpec, image_dir: Path) -> DatasetManifest:
    w, h = spec.image_size
    tiles_per_class = spec.n_patients * spec.images_per_patient
    fringe_classes = [t for t in spec.texture_classes if t.background_cover[0] < 0.5]
    records: list[SampleRecord] = []
    for ci, tc in enumerate(spec.texture_classes):
        for ti in range(tiles_per_class):
            rng = derive_rng(spec.seed, 11, ci, ti)
            tile_id = f"src_{tc.name}_{ti:04d}"
            tile = _render_source_tile(tc, fringe_classes, ti, w, h, rng)
            path = image_dir / f"{tile_id}.png"
            _save(tile, path)
            records.append(
                SampleRecord(
                    sample_id=tile_id,
                    patient_id=tile_id,
                    image_id=tile_id,
                    magnification="none",
                    class_label=tc.name,
                    source_path=str(path),
                )
            )
    return DatasetManifest(tuple(records), "tissue_source")


def _render_source_tile(
    tc: TextureClass,
    fringe_classes: list[TextureClass],
    tile_index: int,
    w: int,
    h: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Class texture occluded by the global background at a drawn coverage.

    Mostly-occluded classes (cover lower bound >= 0.5) have no visible texture
    of their own, so their fringe cycles through the mostly-visible classes;
    this teaches a filter both sides of the half-covered boundary.
    """
    lo, hi = tc.background_cover
    if (lo, hi) == (0.0, 0.0):
        return _render_texture(tc, w, h, rng)
    if lo >= 0.5:
        if not fringe_classes:
            raise ValueError("occluded classes need a mostly-visible class for the fringe")
        base_tc = fringe_classes[tile_index % len(fringe_classes)]
    else:
        base_tc = tc
    coverage = rng.uniform(lo, hi)
    if lo == 0.0 and rng.uniform() < 0.25:
        coverage = 0.0  # keep a share of genuinely clean fringe tiles
    tile = _render_texture(base_tc, w, h, rng)
    mask = _occlusion_mask(w, h, coverage, rng)
    if mask.any():
        backdrop = _render_backdrop(
            w,
            h,
            rng,
            rng.uniform(*SOURCE_DEBRIS_DENSITY),
            rng.uniform(*SOURCE_DEBRIS_RADIUS),
        )
        tile[mask] = backdrop[mask]
    return tile


def _save(pixels: np.ndarray, path: Path) -> None:
    try:
        save_png(RgbImage(pixels), path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_relevance(rows: list[tuple[str, bool]], path: Path) -> None:
    lines = ["sample_id,relevant"]
    lines.extend(f"{sid},{'true' if rel else 'false'}" for sid, rel in rows)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_relevance(path: str | Path) -> dict[str, bool]:
    """Parse a relevance.csv back into {patch sample_id: relevant}."""
    out: dict[str, bool] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "sample_id,relevant":
        raise IoError(f"{path}: expected header sample_id,relevant")
    for line in lines[1:]:
        if not line:
            continue
        sid, _, flag = line.rpartition(",")
        out[sid] = flag == "true"
    return out


def default_target_spec(
    n_patients: int = 20,
    images_per_patient: int = 4,
    irrelevant_fraction: float = 0.3,
    seed: int = 0,
    image_size: tuple[int, int] = (300, 300),
    patch_size: int = 150,
) -> SynthSpec:
    """Two well-separated tumor textures on bright-background contamination."""
    return SynthSpec(
        n_patients=n_patients,
        images_per_patient=images_per_patient,
        image_size=image_size,
        texture_classes=(
            TextureClass("benign_loose", (205, 160, 185), 8.0, 4.0, 9.0),
            TextureClass("malign_dense", (110, 55, 130), 8.0, 9.0, 6.0),
        ),
        irrelevant_fraction=irrelevant_fraction,
        seed=seed,
        kind="tumor_target",
        patch_size=patch_size,
    )


def default_source_spec(
    tiles_per_class: int = 60,
    seed: int = 1,
    tile_size: tuple[int, int] = (150, 150),
) -> SynthSpec:
    """Source tiles: the two tumor-like textures plus pure background."""
    return SynthSpec(
        n_patients=tiles_per_class,
        images_per_patient=1,
        image_size=tile_size,
        texture_classes=(
            TextureClass("tissue_loose", (205, 160, 185), 8.0, 4.0, 9.0, (0.0, 0.20)),
            TextureClass("tissue_dense", (110, 55, 130), 8.0, 9.0, 6.0, (0.0, 0.20)),
            TextureClass(
                BACKGROUND_CLASS,
                BACKGROUND_COLOR,
                BACKGROUND_SIGMA,
                0.0,
                1.0,
                background_cover=(0.80, 1.0),
            ),
        ),
        irrelevant_fraction=0.0,
        seed=seed,
        kind="tissue_source",
        patch_size=min(tile_size),
    )
