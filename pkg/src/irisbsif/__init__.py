"""Domain-specific BSIF filter training, iris encoding, matching and evaluation."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, IrisBsifError, NumericError
from .imgio import (
    DatasetManifest,
    FilterBank,
    IrisTemplate,
    ManifestRecord,
    NormalizedIris,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DataError",
    "IrisBsifError",
    "NumericError",
    "DatasetManifest",
    "FilterBank",
    "IrisTemplate",
    "ManifestRecord",
    "NormalizedIris",
]
