from .dataset import (
    Dataset,
    DatasetSpec,
    SampleBatch,
    build_dataset,
    export_directory,
    generate_synthetic,
    load_directory,
    load_pair,
    split,
)
from .errors import DataError, DimensionMismatchError, HeaderError, UnreadableFileError
from .netpbm import read_netpbm, write_pgm, write_ppm
from .synthetic import generate_sample

__all__ = [
    "Dataset", "DatasetSpec", "SampleBatch", "build_dataset", "export_directory",
    "generate_synthetic", "load_directory", "load_pair", "split", "DataError",
    "DimensionMismatchError", "HeaderError", "UnreadableFileError", "read_netpbm",
    "write_pgm", "write_ppm", "generate_sample",
]
