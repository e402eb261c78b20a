"""Per-image global consistency metrics for synthetic 2D images."""

from gcmetrics.core import (
    ATTRIBUTES,
    AttributeVector,
    ConfigurationError,
    InvalidInputError,
    NumericalError,
    cosine_similarity,
    minmax_normalize,
    pearson_correlation,
)

__all__ = [
    "ATTRIBUTES",
    "AttributeVector",
    "ConfigurationError",
    "InvalidInputError",
    "NumericalError",
    "cosine_similarity",
    "minmax_normalize",
    "pearson_correlation",
]

__version__ = "0.1.0"
