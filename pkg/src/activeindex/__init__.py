"""Active indexing: IVF-PQ style ANN indexes plus perceptual image activation."""

from activeindex.errors import (
    ActiveIndexError,
    CorruptIndexError,
    FormatError,
    InvalidArgumentError,
    NotFoundError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveIndexError",
    "CorruptIndexError",
    "FormatError",
    "InvalidArgumentError",
    "NotFoundError",
    "NumericError",
    "__version__",
]
