from .checkpoint import load_meta_state, load_params, save_meta_state, save_params
from .dataset import Dataset, DatasetError, read_dataset, write_dataset
from .reports import read_report, write_log, write_report
from .tsplib import (
    FormatError,
    format_cvrplib,
    format_tsplib,
    normalize,
    parse_cvrplib,
    parse_tsplib,
    read_cvrplib,
    read_tsplib,
)

__all__ = [
    "Dataset", "DatasetError", "FormatError", "format_cvrplib", "format_tsplib", "load_meta_state",
    "load_params", "normalize", "parse_cvrplib", "parse_tsplib", "read_cvrplib", "read_dataset",
    "read_report", "read_tsplib", "save_meta_state", "save_params", "write_dataset", "write_log",
    "write_report",
]
