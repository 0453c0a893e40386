"""Address-level Bitcoin scam classification.

Pipeline: fetch labeled address reports, extract 17 behavioral features,
standardize, optionally rebalance the classes, then train and compare an
attention-LSTM against tree ensembles, all built from scratch on numpy.
"""

__version__ = "0.1.0"

from .errors import ScamlensError
from .features import FEATURE_NAMES, Scaler, extract_features, featurize_all
from .ingest import (
    CLASS_ORDER,
    AddressHistory,
    LabeledTable,
    ScamLabel,
    TxRecord,
    split,
)
from .resampling import Method, ResampleMethod, apply_method

__all__ = [
    "__version__",
    "AddressHistory",
    "CLASS_ORDER",
    "FEATURE_NAMES",
    "LabeledTable",
    "Method",
    "ResampleMethod",
    "ScamLabel",
    "ScamlensError",
    "Scaler",
    "TxRecord",
    "apply_method",
    "extract_features",
    "featurize_all",
    "split",
]
