class ExtractorError(Exception):
    """Base class for extractor failures."""


class MissingWeights(ExtractorError):
    """No usable network weights (file absent or unreadable)."""


class UnreadableImage(ExtractorError):
    """An image file could not be decoded; the message names the sample_id."""


class MalformedManifest(ExtractorError):
    """The manifest CSV is missing required columns or has broken rows."""
