"""Flat-buffer batch container crossing the binding boundary.

External training loops hand over one contiguous buffer per field instead of
per-token objects: four parallel float64 buffers (log-probs and advantage),
four parallel int64 identity buffers (needed because mask randomness is keyed
by trajectory and position, not drawn sequentially), and two ragged top-k
sections encoded as ``offsets`` + flat ``ids``/``logps`` arrays, where row
``t`` owns the slice ``[offsets[t], offsets[t + 1])``.

Validation happens at construction and every failure carries an indexed
diagnostic (buffer name plus offending position).  The container never copies
or mutates caller memory; downstream marshaling slices views out of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BatchBuffers",
    "BindingError",
    "BufferShapeError",
    "MarshalError",
    "NonFiniteEntryError",
]

FLOAT_BUFFERS = ("logp_inf", "logp_ref", "logp_new", "advantage")
ID_BUFFERS = ("token_id", "trajectory_id", "position", "group_id")
TARGET_POLICIES = ("latest", "reference")


class BindingError(ValueError):
    """Base class for every boundary failure raised by this package."""


class BufferShapeError(BindingError):
    """A buffer has the wrong dtype, dimensionality, or length."""


class NonFiniteEntryError(BindingError):
    """A numeric buffer holds a forbidden NaN/inf; carries buffer and index."""

    def __init__(self, buffer: str, index: int, value: float) -> None:
        super().__init__(f"{buffer}[{index}] must be finite, got {value}")
        self.buffer = buffer
        self.index = index


class MarshalError(BindingError):
    """The primary pipeline rejected one marshaled record; carries its index."""

    def __init__(self, index: int, reason: str) -> None:
        super().__init__(f"record {index}: {reason}")
        self.index = index


def _require(condition: bool, exc: BindingError) -> None:
    if not condition:
        raise exc


def _check_flat(name: str, arr: object, dtype: np.dtype) -> np.ndarray:
    _require(
        isinstance(arr, np.ndarray),
        BufferShapeError(f"{name} must be a numpy array, got {type(arr).__name__}"),
    )
    _require(
        arr.dtype == dtype,
        BufferShapeError(f"{name} must have dtype {dtype}, got {arr.dtype}"),
    )
    _require(
        arr.ndim == 1,
        BufferShapeError(f"{name} must be 1-D, got {arr.ndim}-D"),
    )
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        index = int(bad[0])
        raise NonFiniteEntryError(name, index, float(arr[index]))


def _check_topk_section(side: str, offsets, ids, logps, n_tokens: int) -> None:
    _check_flat(f"topk_{side}_offsets", offsets, np.dtype(np.int64))
    _check_flat(f"topk_{side}_ids", ids, np.dtype(np.int64))
    _check_flat(f"topk_{side}_logps", logps, np.dtype(np.float64))
    _require(
        offsets.shape[0] == n_tokens + 1,
        BufferShapeError(
            f"topk_{side}_offsets needs {n_tokens + 1} entries for "
            f"{n_tokens} tokens, got {offsets.shape[0]}"
        ),
    )
    _require(
        ids.shape == logps.shape,
        BufferShapeError(
            f"topk_{side}_ids and topk_{side}_logps lengths differ: "
            f"{ids.shape[0]} vs {logps.shape[0]}"
        ),
    )
    _require(
        offsets.shape[0] > 0 and int(offsets[0]) == 0,
        BufferShapeError(f"topk_{side}_offsets must start at 0"),
    )
    steps = np.diff(offsets)
    bad = np.flatnonzero(steps < 0)
    _require(
        bad.size == 0,
        BufferShapeError(
            f"topk_{side}_offsets must be non-decreasing; "
            f"entry {int(bad[0]) + 1 if bad.size else 0} goes backwards"
        ),
    )
    _require(
        int(offsets[-1]) == ids.shape[0],
        BufferShapeError(
            f"topk_{side}_offsets ends at {int(offsets[-1])} but "
            f"topk_{side}_ids holds {ids.shape[0]} entries"
        ),
    )
    # -inf is a legitimate top-k log-prob (zero-mass token); NaN/+inf is not.
    bad = np.flatnonzero(np.isnan(logps) | (logps == np.inf))
    if bad.size:
        index = int(bad[0])
        raise NonFiniteEntryError(f"topk_{side}_logps", index, float(logps[index]))


@dataclass(frozen=True)
class BatchBuffers:
    """One batch of tokens plus the config scalars the pipeline needs.

    All parallel buffers must share their length N; ``kappa = None`` lets the
    pipeline calibrate the normalizer-correction factor from this batch.
    """

    logp_inf: np.ndarray
    logp_ref: np.ndarray
    logp_new: np.ndarray
    advantage: np.ndarray
    token_id: np.ndarray
    trajectory_id: np.ndarray
    position: np.ndarray
    group_id: np.ndarray
    topk_inf_offsets: np.ndarray
    topk_inf_ids: np.ndarray
    topk_inf_logps: np.ndarray
    topk_new_offsets: np.ndarray
    topk_new_ids: np.ndarray
    topk_new_logps: np.ndarray
    lam: float = 1.0
    c1: float = 3.0
    c2: float = 1.28
    top_k: int = 20
    target_policy: str = "latest"
    mask_seed: int = 0
    kappa: float | None = field(default=None)

    def __post_init__(self) -> None:
        for name in FLOAT_BUFFERS:
            _check_flat(name, getattr(self, name), np.dtype(np.float64))
        for name in ID_BUFFERS:
            _check_flat(name, getattr(self, name), np.dtype(np.int64))
        lengths = {
            name: getattr(self, name).shape[0] for name in FLOAT_BUFFERS + ID_BUFFERS
        }
        if len(set(lengths.values())) != 1:
            listing = ", ".join(f"{k}={v}" for k, v in sorted(lengths.items()))
            raise BufferShapeError(f"parallel buffers differ in length: {listing}")
        n = self.logp_inf.shape[0]
        _require(n > 0, BufferShapeError("batch must contain at least one token"))
        for name in FLOAT_BUFFERS:
            _check_finite(name, getattr(self, name))
        _check_topk_section(
            "inf", self.topk_inf_offsets, self.topk_inf_ids, self.topk_inf_logps, n
        )
        _check_topk_section(
            "new", self.topk_new_offsets, self.topk_new_ids, self.topk_new_logps, n
        )
        _require(
            self.target_policy in TARGET_POLICIES,
            BindingError(
                f"target_policy must be one of {TARGET_POLICIES}, "
                f"got {self.target_policy!r}"
            ),
        )
        if self.kappa is not None:
            _require(
                np.isfinite(self.kappa) and self.kappa > 0,
                BindingError(f"kappa must be positive and finite, got {self.kappa}"),
            )

    def __len__(self) -> int:
        return self.logp_inf.shape[0]
