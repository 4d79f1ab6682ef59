"""Flat-buffer bindings over the obrs-align weight pipeline.

External training code hands over contiguous per-field buffers; this layer
marshals them into the primary package's records, calls its pipeline, and
returns freshly-allocated result buffers.  Errors are native exceptions
carrying an indexed diagnostic (which buffer, which position, which record).
"""

from .api import BatchWeights, batch_tis, batch_weights, buffers_from_records
from .buffers import (
    BatchBuffers,
    BindingError,
    BufferShapeError,
    MarshalError,
    NonFiniteEntryError,
)

__version__ = "0.1.0"

__all__ = [
    "BatchBuffers",
    "BatchWeights",
    "BindingError",
    "BufferShapeError",
    "MarshalError",
    "NonFiniteEntryError",
    "batch_tis",
    "batch_weights",
    "buffers_from_records",
    "__version__",
]
