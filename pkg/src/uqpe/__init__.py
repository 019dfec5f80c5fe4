"""Debiased estimation and bootstrap inference for unconditional quantile partial effects."""

__version__ = "0.1.0"

from .core import UqpeConfig, UqpeEstimate, estimate_all  # noqa: E402
from .data import Dataset, build_basis, ingest_csv  # noqa: E402

__all__ = ["Dataset", "UqpeConfig", "UqpeEstimate", "build_basis", "estimate_all", "ingest_csv"]
