"""Standalone deep-feature extractor.

Reads an image manifest CSV, runs an Inception-v3 in eval mode, and writes the
2,048-dim global-average-pooled penultimate activations as an FV01 feature
file plus a sidecar JSON documenting weights identity and preprocessing. The
only contracts shared with consumers are those two file formats.
"""

from .errors import ExtractorError, MissingWeights, UnreadableImage
from .extract import ExtractorConfig, extract

__all__ = [
    "ExtractorConfig",
    "ExtractorError",
    "MissingWeights",
    "UnreadableImage",
    "extract",
]
