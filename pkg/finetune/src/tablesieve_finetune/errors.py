class FinetuneError(Exception):
    """Base class for everything this package raises on purpose."""


class SpecError(FinetuneError):
    """Invalid training specification or command usage."""


class DataError(FinetuneError):
    """Manifest, image, or feature data is unusable."""


class WeightsUnavailableError(FinetuneError):
    """Pretrained backbone weights could not be loaded."""


class ExportError(FinetuneError):
    """Exported graph failed the post-export parity check."""
