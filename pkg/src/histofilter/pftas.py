"""Parameter-free threshold adjacency statistics over 8-bit RGB patches.

Per channel, an Otsu split selects foreground; the foreground mean and
population standard deviation define three nested binarizations, and each
binarization plus its complement yields a 9-bin histogram of foreground
8-neighbor counts. 3 channels x 3 thresholds x 2 polarities x 9 bins = 162.

Channel statistics are computed from the intensity histogram rather than the
pixel array, so the descriptor is bit-identical under any pixel permutation
(rotations, flips).
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyHistogram, GridMismatch
from .imaging import RgbImage, compute_grid, decode_image, extract_patches, patch_sample_id

N_BINS = 256
PFTAS_DIM = 162

_LEVELS = np.arange(N_BINS, dtype=np.int64)


def otsu_threshold(histogram: np.ndarray) -> int:
    """Threshold t maximizing between-class variance of {v <= t} vs {v > t}.

    Only splits with both classes nonempty are candidates; ties take the
    smallest t. A single-valued histogram returns that value.
    """
    hist = np.asarray(histogram, dtype=np.int64)
    if hist.shape != (N_BINS,):
        raise ValueError(f"expected {N_BINS}-bin histogram, got shape {hist.shape}")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    total = int(hist.sum())
    if total == 0:
        raise EmptyHistogram("cannot threshold an empty histogram")

    w0 = np.cumsum(hist)[:-1]  # candidates t = 0..254
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return int(np.flatnonzero(hist)[0])

    m0 = np.cumsum(hist * _LEVELS)[:-1]
    m_total = int((hist * _LEVELS).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (m_total - m0) / w1
        variance = (w0 * w1).astype(np.float64) * (mu0 - mu1) ** 2
    variance[~valid] = -1.0
    return int(np.argmax(variance))


def tas_histogram(mask: np.ndarray) -> np.ndarray:
    """Normalized 9-bin distribution of foreground 8-neighbor counts.

    Counted at foreground pixels only; out-of-bounds neighbors are background.
    An empty mask yields the zero vector.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-d")
    n_fg = int(mask.sum())
    if n_fg == 0:
        return np.zeros(9, dtype=np.float64)
    padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=np.int64)
    padded[1:-1, 1:-1] = mask
    counts = np.zeros(mask.shape, dtype=np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            counts += padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
    hist = np.bincount(counts[mask], minlength=9)
    return hist.astype(np.float64) / n_fg


def _channel_blocks(channel: np.ndarray) -> list[np.ndarray]:
    hist = np.bincount(channel.ravel(), minlength=N_BINS).astype(np.int64)
    t = otsu_threshold(hist)
    fg = hist[t + 1 :]
    n_fg = int(fg.sum())
    if n_fg > 0:
        levels = _LEVELS[t + 1 :]
        mu = float((fg * levels).sum()) / n_fg
        var = float((fg * levels * levels).sum()) / n_fg - mu * mu
        sigma = float(np.sqrt(max(var, 0.0)))
    else:
        mu = 0.0
        sigma = 0.0
    masks = (
        (channel > mu - sigma) & (channel <= mu + sigma),
        channel > mu - sigma,
        channel > mu,
    )
    blocks = []
    for m in masks:
        blocks.append(tas_histogram(m))
        blocks.append(tas_histogram(~m))
    return blocks


def pftas(image: RgbImage) -> np.ndarray:
    """162-dim descriptor, channel-major: R then G then B, 54 values each."""
    blocks = []
    for c in range(3):
        blocks.extend(_channel_blocks(image.pixels[:, :, c]))
    vec = np.concatenate(blocks)
    assert vec.shape == (PFTAS_DIM,)
    return vec


def _record_vectors(record, patch_size: int):
    image = decode_image(record.source_path)
    if record.is_patch:
        s = patch_size
        x, y = record.patch_origin
        if (image.width, image.height) != (s, s):
            # source_path holds the parent image; crop the record's window
            if x + s > image.width or y + s > image.height:
                raise GridMismatch(
                    f"{record.sample_id}: window ({x},{y})+{s} exceeds image "
                    f"{image.width}x{image.height}"
                )
            image = RgbImage(image.pixels[y : y + s, x : x + s].copy())
        return [(record.sample_id, pftas(image))]
    grid = compute_grid(image.width, image.height, patch_size)
    if grid.n_patches == 1:
        # single-window images (source tiles) keep their own id
        return [(record.sample_id, pftas(image))]
    return [
        ((patch_sample_id(record.image_id, x, y)), pftas(patch))
        for (x, y), patch in extract_patches(image, grid)
    ]


def pftas_features(manifest, patch_size: int = 150, jobs: int = 1, log=None):
    """Descriptors for every patch of every manifest record, as a FeatureMatrix.

    Whole-image records are decoded and gridded at patch_size; rows are keyed
    by derived patch ids (or the record's own id when the grid is one window).
    Patch records are computed as-is under their own id. Row order follows the
    manifest, patches in row-major grid order.
    """
    from .feature_io import FeatureMatrix

    records = manifest.records
    if jobs > 1 and len(records) > 1:
        from joblib import Parallel, delayed

        per_record = Parallel(n_jobs=jobs)(
            delayed(_record_vectors)(r, patch_size) for r in records
        )
    else:
        per_record = []
        for k, r in enumerate(records):
            per_record.append(_record_vectors(r, patch_size))
            if log is not None and (k + 1) % 50 == 0:
                print(f"pftas: {k + 1}/{len(records)} records", file=log)
    ids = []
    rows = []
    for chunk in per_record:
        for sid, vec in chunk:
            ids.append(sid)
            rows.append(vec)
    return FeatureMatrix(tuple(ids), np.vstack(rows).astype(np.float32))
