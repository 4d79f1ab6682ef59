"""The two boundary operations: batch_weights and batch_tis.

Both marshal flat buffers into the primary package's per-token records, call
its pipeline, and pack the results back into freshly-allocated buffers.  No
math is re-implemented here — bitwise agreement with the primary pipeline on
identical inputs and seeds is by construction, and the parity suite pins it.

The operations are re-entrant: no state lives in this module, input buffers
are never written to, and every output buffer is newly allocated per call.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np
from obrs_align.categorical import SparseTopK
from obrs_align.weights import (
    BatchCalibration,
    JackpotConfig,
    TargetPolicy,
    TokenRecord,
    batch_weights_pipeline,
    tis_weight,
)

from .buffers import BatchBuffers, MarshalError

__all__ = ["BatchWeights", "batch_tis", "batch_weights", "buffers_from_records"]


class BatchWeights(NamedTuple):
    """Output buffers of :func:`batch_weights` plus the batch calibration."""

    mask: np.ndarray        # uint8, 1 = token survives
    rho: np.ndarray         # float64, composed correction weight
    w_obrs: np.ndarray      # float64, rejection-sampling weight component
    calibration: BatchCalibration


def _record_at(buffers: BatchBuffers, i: int) -> TokenRecord:
    """Marshal row ``i`` into the primary's record type (views, no copies)."""
    inf = slice(int(buffers.topk_inf_offsets[i]), int(buffers.topk_inf_offsets[i + 1]))
    new = slice(int(buffers.topk_new_offsets[i]), int(buffers.topk_new_offsets[i + 1]))
    try:
        return TokenRecord(
            token_id=int(buffers.token_id[i]),
            logp_inf=float(buffers.logp_inf[i]),
            logp_ref=float(buffers.logp_ref[i]),
            logp_new=float(buffers.logp_new[i]),
            topk_inf=SparseTopK(
                buffers.topk_inf_ids[inf], buffers.topk_inf_logps[inf]
            ),
            topk_new=SparseTopK(
                buffers.topk_new_ids[new], buffers.topk_new_logps[new]
            ),
            advantage=float(buffers.advantage[i]),
            group_id=int(buffers.group_id[i]),
            position=int(buffers.position[i]),
            trajectory_id=int(buffers.trajectory_id[i]),
        )
    except ValueError as exc:
        raise MarshalError(i, str(exc)) from exc


def _jackpot_config(buffers: BatchBuffers) -> JackpotConfig:
    return JackpotConfig(
        lam=buffers.lam,
        c1=buffers.c1,
        c2=buffers.c2,
        top_k=buffers.top_k,
        target_policy=TargetPolicy(buffers.target_policy),
        mask_seed=buffers.mask_seed,
    )


def batch_weights(buffers: BatchBuffers) -> BatchWeights:
    """Run the full mask -> calibration -> weight pipeline on one batch."""
    records = [_record_at(buffers, i) for i in range(len(buffers))]
    weights, calibration = batch_weights_pipeline(
        records, _jackpot_config(buffers), kappa=buffers.kappa
    )
    n = len(weights)
    mask = np.fromiter((w.mask for w in weights), dtype=np.uint8, count=n)
    rho = np.fromiter((w.rho for w in weights), dtype=np.float64, count=n)
    w_obrs = np.fromiter((w.w_obrs for w in weights), dtype=np.float64, count=n)
    return BatchWeights(mask=mask, rho=rho, w_obrs=w_obrs, calibration=calibration)


def batch_tis(buffers: BatchBuffers, c: float) -> np.ndarray:
    """Truncated importance weights min(c, p_ref/p_inf), one per token."""
    out = np.empty(len(buffers), dtype=np.float64)
    for i in range(len(buffers)):
        out[i] = tis_weight(float(buffers.logp_ref[i]), float(buffers.logp_inf[i]), c)
    return out


def buffers_from_records(
    records: Iterable[TokenRecord],
    *,
    lam: float = 1.0,
    c1: float = 3.0,
    c2: float = 1.28,
    top_k: int = 20,
    target_policy: str = "latest",
    mask_seed: int = 0,
    kappa: float | None = None,
) -> BatchBuffers:
    """Flatten primary-side records into boundary buffers (interop helper)."""
    records = list(records)

    def ragged(side: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lists = [getattr(r, f"topk_{side}") for r in records]
        offsets = np.zeros(len(records) + 1, dtype=np.int64)
        np.cumsum([t.token_ids.shape[0] for t in lists], out=offsets[1:])
        ids = np.concatenate([t.token_ids for t in lists]).astype(np.int64)
        logps = np.concatenate([t.log_probs for t in lists]).astype(np.float64)
        return offsets, ids, logps

    inf_offsets, inf_ids, inf_logps = ragged("inf")
    new_offsets, new_ids, new_logps = ragged("new")
    return BatchBuffers(
        logp_inf=np.array([r.logp_inf for r in records], dtype=np.float64),
        logp_ref=np.array([r.logp_ref for r in records], dtype=np.float64),
        logp_new=np.array([r.logp_new for r in records], dtype=np.float64),
        advantage=np.array([r.advantage for r in records], dtype=np.float64),
        token_id=np.array([r.token_id for r in records], dtype=np.int64),
        trajectory_id=np.array([r.trajectory_id for r in records], dtype=np.int64),
        position=np.array([r.position for r in records], dtype=np.int64),
        group_id=np.array([r.group_id for r in records], dtype=np.int64),
        topk_inf_offsets=inf_offsets,
        topk_inf_ids=inf_ids,
        topk_inf_logps=inf_logps,
        topk_new_offsets=new_offsets,
        topk_new_ids=new_ids,
        topk_new_logps=new_logps,
        lam=lam,
        c1=c1,
        c2=c2,
        top_k=top_k,
        target_policy=target_policy,
        mask_seed=mask_seed,
        kappa=kappa,
    )
