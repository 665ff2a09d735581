"""Fine-tuning and export of the CNN table classifiers consumed by the
tablesieve pipeline."""

from .data import Dataset, Sample, read_dataset
from .errors import (
    DataError,
    ExportError,
    FinetuneError,
    SpecError,
    WeightsUnavailableError,
)
from .export import export
from .models import TableClassifier, backbone_hash, build_model
from .spec import TrainSpec
from .training import train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Sample",
    "TableClassifier",
    "TrainSpec",
    "read_dataset",
    "build_model",
    "backbone_hash",
    "train",
    "export",
    "FinetuneError",
    "SpecError",
    "DataError",
    "WeightsUnavailableError",
    "ExportError",
    "__version__",
]
