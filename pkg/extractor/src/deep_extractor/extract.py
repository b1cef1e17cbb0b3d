"""Batch inference: manifest images through Inception-v3 to FV01 features.

Weights come from a local state-dict file or, for offline contract testing,
from a seeded random initialization. Inference runs in eval mode with
deterministic algorithms, so identical configs produce bitwise-identical
output files. Every preprocessing choice is recorded in a sidecar JSON next
to the output, because consumers cannot recover it from the vectors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import MissingWeights, UnreadableImage
from .fv import write_fv01
from .manifest import read_manifest

FEATURE_DIM = 2048
# ImageNet channel statistics; applied after scaling pixels to [0, 1]
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ExtractorConfig:
    manifest_path: str | Path
    output_path: str | Path
    weights_path: str | Path | None = None
    init_seed: int | None = None
    batch_size: int = 16
    device: str = "cpu"
    input_size: int = 299  # bilinear resize target, square

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.input_size < 75:
            raise ValueError("input_size below the network's minimum (75)")
        if (self.weights_path is None) == (self.init_seed is None):
            raise ValueError("pass exactly one of weights_path or init_seed")


def _build_model(config):
    import torch
    from torchvision.models import inception_v3

    torch.use_deterministic_algorithms(True)
    if config.weights_path is not None:
        weights_file = Path(config.weights_path)
        if not weights_file.is_file():
            raise MissingWeights(f"weights file not found: {weights_file}")
        model = inception_v3(weights=None, aux_logits=True, init_weights=False)
        try:
            state = torch.load(weights_file, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except (RuntimeError, ValueError, KeyError, EOFError) as exc:
            raise MissingWeights(f"cannot load {weights_file}: {exc}") from exc
        identity = f"file:{weights_file.name}:sha256:{_sha256(weights_file)}"
    else:
        # seeded init keeps the file contract testable without any weights
        torch.manual_seed(int(config.init_seed))
        model = inception_v3(weights=None, aux_logits=True, init_weights=True)
        identity = f"random-init(seed={int(config.init_seed)})"
    model.fc = torch.nn.Identity()  # expose the 2,048-dim pooled activations
    model.eval()
    return model.to(config.device), identity


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_batch(entries, size):
    batch = np.empty((len(entries), 3, size, size), dtype=np.float32)
    for i, (sid, path) in enumerate(entries):
        try:
            with Image.open(path) as img:
                rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
        except (FileNotFoundError, OSError, UnidentifiedImageError, ValueError) as exc:
            raise UnreadableImage(f"{sid}: {path}: {exc}") from exc
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
        arr = (arr - NORM_MEAN) / NORM_STD
        batch[i] = arr.transpose(2, 0, 1)
    return batch


def extract(config: ExtractorConfig) -> Path:
    """Run the network over every manifest row; returns the output path."""
    import torch

    entries = read_manifest(config.manifest_path)
    model, weights_identity = _build_model(config)

    rows = np.empty((len(entries), FEATURE_DIM), dtype=np.float32)
    with torch.no_grad():
        for start in range(0, len(entries), config.batch_size):
            chunk = entries[start : start + config.batch_size]
            batch = torch.from_numpy(_load_batch(chunk, config.input_size))
            out = model(batch.to(config.device))
            rows[start : start + len(chunk)] = out.cpu().numpy().astype(np.float32)

    out_path = Path(config.output_path)
    write_fv01([sid for sid, _ in entries], rows, out_path)
    sidecar = {
        "weights": weights_identity,
        "architecture": "inception_v3",
        "feature": "global-average-pooled penultimate activations",
        "feature_dim": FEATURE_DIM,
        "resize": f"bilinear to {config.input_size}x{config.input_size}",
        "normalize_mean": list(NORM_MEAN),
        "normalize_std": list(NORM_STD),
        "transform_input": False,
        "device": config.device,
        "n_rows": len(entries),
    }
    out_path.with_suffix(out_path.suffix + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return out_path
