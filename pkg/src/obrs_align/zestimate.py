"""Memory-bounded estimation of the acceptance normalizer Z from top-k lists.

A serving engine can afford to store only the top-k log-probs of the rollout
distribution per step, so the exact ``Z = sum_i min(p_inf_i, p_new_i/lam)``
is approximated by the same sum restricted to the union of the two top-k
supports.  Tokens known on one side only contribute ``min(known, 0) = 0``,
which keeps the estimate a guaranteed underestimate.  The batch-level factor
``kappa = alpha_hat / mean(z_approx)`` then removes the systematic bias by
anchoring the batch mean to the realized acceptance rate ``alpha_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .categorical import Categorical, SparseTopK, top_k
from .obrs import ObrsParams, post_rejection

__all__ = [
    "ZEstimate",
    "BatchCalibration",
    "ZErrorRow",
    "KAPPA_CLAMP",
    "z_topk_approx",
    "calibrate",
    "z_error_report",
    "union_topk_pair",
    "clamp_event_count",
]

#: kappa is clamped to this range; out-of-range values indicate a degenerate batch.
KAPPA_CLAMP = (0.1, 10.0)

_clamp_events = 0


def clamp_event_count() -> int:
    """How many times calibrate() had to clamp kappa in this process."""
    return _clamp_events


@dataclass(frozen=True)
class ZEstimate:
    """Top-k underestimate of Z with its supporting token set."""

    z_approx: float
    support: frozenset[int]
    k: int

    def __post_init__(self) -> None:
        if self.z_approx < 0:
            raise ValueError(f"z_approx must be >= 0, got {self.z_approx}")
        if len(self.support) > 2 * self.k:
            raise ValueError("support larger than the two top-k lists combined")


@dataclass(frozen=True)
class BatchCalibration:
    """Batch acceptance statistics and the resulting debiasing factor kappa.

    Instances produced by :func:`calibrate` satisfy
    ``kappa = clamp(alpha_hat / mean_z_approx)``; ``clamped`` records whether
    the clamp fired.  Frozen-kappa instances (two-pass pipelines that reuse a
    kappa computed elsewhere) may carry any positive kappa.
    """

    proposed: int
    accepted: int
    alpha_hat: float
    mean_z_approx: float
    kappa: float
    clamped: bool = False

    def __post_init__(self) -> None:
        if self.proposed < 1:
            raise ValueError(f"proposed must be >= 1, got {self.proposed}")
        if not 0 <= self.accepted <= self.proposed:
            raise ValueError(f"accepted must lie in [0, proposed], got {self.accepted}")
        if not math.isclose(self.alpha_hat, self.accepted / self.proposed, abs_tol=1e-12):
            raise ValueError("alpha_hat must equal accepted/proposed")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")


def z_topk_approx(topk_inf: SparseTopK, topk_new: SparseTopK, params: ObrsParams) -> ZEstimate:
    """sum over the union support of min(p_inf, p_new/lam), missing side = 0.

    A token present in only one list contributes ``min(known, 0) = 0``; see
    module docstring for why this preserves the underestimation guarantee.
    """
    union = np.union1d(topk_inf.token_ids, topk_new.token_ids)
    inf_vals = np.zeros(union.size)
    new_vals = np.zeros(union.size)
    pos = np.searchsorted(union, topk_inf.token_ids)
    inf_vals[pos] = np.exp(topk_inf.log_probs)
    pos = np.searchsorted(union, topk_new.token_ids)
    new_vals[pos] = np.exp(topk_new.log_probs)
    z = float(np.sum(np.minimum(inf_vals, new_vals / params.lam)))
    return ZEstimate(
        z_approx=z,
        support=frozenset(int(t) for t in union),
        k=max(topk_inf.k, topk_new.k),
    )


def calibrate(z_approx_values, proposed: int, accepted: int) -> BatchCalibration:
    """kappa = alpha_hat / mean(z_approx), clamped to KAPPA_CLAMP."""
    global _clamp_events
    values = np.asarray(z_approx_values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("z_approx_values must be non-empty")
    if proposed < 1:
        raise ValueError(f"proposed must be >= 1, got {proposed}")
    if accepted > proposed:
        raise ValueError(f"accepted {accepted} exceeds proposed {proposed}")
    mean_z = float(np.mean(values))
    if mean_z <= 0:
        raise ValueError(f"mean z_approx must be positive, got {mean_z}")
    alpha_hat = accepted / proposed
    raw_kappa = alpha_hat / mean_z
    kappa = min(max(raw_kappa, KAPPA_CLAMP[0]), KAPPA_CLAMP[1])
    clamped = kappa != raw_kappa
    if clamped:
        _clamp_events += 1
    return BatchCalibration(
        proposed=proposed,
        accepted=accepted,
        alpha_hat=alpha_hat,
        mean_z_approx=mean_z,
        kappa=kappa,
        clamped=clamped,
    )


def union_topk_pair(
    p_inf: Categorical, p_new: Categorical, k: int
) -> tuple[SparseTopK, SparseTopK]:
    """Top-k lists extended so each side also carries the other side's ids.

    When the full distributions are available (simulation, benchmarking), the
    union support ``top-k(p_inf) | top-k(p_new)`` can be valued on *both*
    sides, which is how the restricted sum is defined mathematically.  The
    returned lists contain every union token with its true log-prob under the
    respective distribution, so :func:`z_topk_approx` on them computes the
    ideal restricted sum with no zero-filling.
    """
    ids = np.union1d(top_k(p_inf, k).token_ids, top_k(p_new, k).token_ids)

    def as_sparse(dist: Categorical) -> SparseTopK:
        lps = dist.log_probs[ids]
        order = np.lexsort((ids, -lps))
        return SparseTopK(ids[order], lps[order])

    return as_sparse(p_inf), as_sparse(p_new)


@dataclass(frozen=True)
class ZErrorRow:
    """One row of a z_error_report: approximation quality at one k."""

    k: int
    z_approx: float
    z_exact: float
    fraction: float


def z_error_report(p: Categorical, q: Categorical, params: ObrsParams, ks) -> list[ZErrorRow]:
    """Captured fraction z_approx/z_exact for each k; non-decreasing in k.

    ``p`` is the target (p_new side), ``q`` the proposal (p_inf side),
    mirroring the post_rejection argument order.
    """
    ks = list(ks)
    if any(ks[i] >= ks[i + 1] for i in range(len(ks) - 1)):
        raise ValueError("ks must be sorted strictly ascending")
    z_exact = post_rejection(p, q, params).z
    rows = []
    for k in ks:
        if not 1 <= k <= q.vocab_size:
            raise ValueError(f"k must be in [1, {q.vocab_size}], got {k}")
        topk_inf, topk_new = union_topk_pair(q, p, k)
        est = z_topk_approx(topk_inf, topk_new, params)
        rows.append(
            ZErrorRow(k=k, z_approx=est.z_approx, z_exact=z_exact, fraction=est.z_approx / z_exact)
        )
    return rows
