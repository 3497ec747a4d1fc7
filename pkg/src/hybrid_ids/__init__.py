"""Sequential hybrid network intrusion detection.

Two anomaly detectors (a feedforward neural network and a random forest)
run in parallel over encoded KDD connection records; the union of their
alarms is verified and refined by a nearest-centroid misuse stage.
"""

from .dataset import (
    CoarseLabel,
    Dataset,
    EncodedRecord,
    RawRecord,
    SamplingPlan,
    StandardizationStats,
    Taxonomy,
    deduplicate,
    encode,
    parse_kdd_line,
    resample,
    standardize_apply,
    standardize_fit,
    stratified_kfold,
    stratified_split,
)
from .errors import FormatError, ParseError, UnmappedLabelError
from .hybrid import FinalPrediction, HybridConfig, HybridModel, route, train_all

__version__ = "0.1.0"

__all__ = [
    "CoarseLabel",
    "Dataset",
    "EncodedRecord",
    "FinalPrediction",
    "FormatError",
    "HybridConfig",
    "HybridModel",
    "ParseError",
    "RawRecord",
    "SamplingPlan",
    "StandardizationStats",
    "Taxonomy",
    "UnmappedLabelError",
    "deduplicate",
    "encode",
    "parse_kdd_line",
    "resample",
    "route",
    "standardize_apply",
    "standardize_fit",
    "stratified_kfold",
    "stratified_split",
    "train_all",
    "__version__",
]
