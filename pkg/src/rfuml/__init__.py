"""Fuzzy multi-view classification robust to view conflict.

Per-view networks emit fuzzy memberships; credibility and entropy give a
per-view uncertainty, cosine disagreement gives a per-view conflict, and a
weighted fusion combines the views.  A four-stage training pipeline detects
conflicting (instance, view) pairs from their loss history and down-weights
them when retraining.
"""

from .errors import ConfigError, DataError, DegenerateInputError, InvalidInputError, NumericFailure, RfumlError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DegenerateInputError", "InvalidInputError", "NumericFailure",
           "RfumlError", "__version__"]
