"""Sampling-bias diagnostics, demographic regression and temporal trends for
crowdsourced internet speed measurements."""

from .data import Dataset, DataValidationError, Region, SampleBlock, load_dataset, write_dataset
from .ssm import BACKEND, HAVE_COMPILED

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "HAVE_COMPILED",
    "Dataset",
    "DataValidationError",
    "Region",
    "SampleBlock",
    "__version__",
    "load_dataset",
    "write_dataset",
]
