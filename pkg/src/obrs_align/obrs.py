"""Budgeted rejection sampling: acceptance rule, post-rejection distribution,
normalizer Z, budget-to-lambda solver, KL-contraction curve, and the sampler.

The acceptance rule for a proposal token ``a`` drawn from proposal ``q`` with
target ``p`` is ``accept_prob(a) = min(1, p_a / (lam * q_a))``.  Accepted
tokens follow the kept distribution ``min(q, p/lam) / Z`` whose normalizer
``Z = sum_i min(q_i, p_i/lam)`` is exactly the expected acceptance rate.
Raising ``lam`` trades acceptance rate for closeness to the target:
``lam <= min_i p_i/q_i`` keeps ``q`` unchanged (Z = 1) while
``lam >= max_i p_i/q_i`` recovers classical rejection sampling
(kept = p, Z = 1/lam).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .categorical import Categorical, clamped_exp, kl_divergence, logsumexp
from .rng import uniform_counter_block

__all__ = [
    "ObrsParams",
    "PostRejection",
    "KlCurvePoint",
    "accept_prob",
    "post_rejection",
    "solve_lambda_for_budget",
    "kl_curve",
    "obrs_sample",
    "batch_z_complement",
]


@dataclass(frozen=True)
class ObrsParams:
    """The scaling factor ``lam`` that sets the rejection budget."""

    lam: float

    def __post_init__(self) -> None:
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive and finite, got {self.lam}")


@dataclass(frozen=True)
class PostRejection:
    """Acceptance probabilities, normalizer Z, and the kept distribution."""

    accept_probs: np.ndarray
    z: float
    kept_dist: Categorical

    def __post_init__(self) -> None:
        arr = np.array(self.accept_probs, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "accept_probs", arr)
        if not 0 < self.z <= 1 + 1e-9:
            raise ValueError(f"z must lie in (0, 1], got {self.z}")


@dataclass(frozen=True)
class KlCurvePoint:
    """One point of the KL-contraction curve G(c) = KL(target || kept)."""

    c: float
    g: float
    mass_b: float
    z: float


def accept_prob(p_tok: float, q_tok: float, params: ObrsParams) -> float:
    """min(1, p_tok / (lam * q_tok)) for a single token."""
    if not (math.isfinite(p_tok) and math.isfinite(q_tok)):
        raise ValueError("token probabilities must be finite")
    if q_tok <= 0:
        raise ValueError(f"proposal probability must be positive, got {q_tok}")
    if p_tok < 0:
        raise ValueError(f"target probability must be non-negative, got {p_tok}")
    return min(1.0, p_tok / (params.lam * q_tok))


def _accept_prob_vector(target: Categorical, proposal: Categorical, lam: float) -> np.ndarray:
    pl, ql = target.log_probs, proposal.log_probs
    probs = np.ones(target.vocab_size)
    proposed = ql > -math.inf
    # Tokens with q = 0 keep the conventional a = 1: they are never proposed.
    exponent = pl[proposed] - ql[proposed] - math.log(lam)
    probs[proposed] = np.minimum(1.0, clamped_exp(exponent))
    return probs


def post_rejection(p: Categorical, q: Categorical, params: ObrsParams) -> PostRejection:
    """Exact acceptance probabilities, Z, and kept distribution for (p, q, lam).

    ``p`` is the target, ``q`` the proposal.  Raises if the two supports are
    disjoint enough that Z underflows to zero.
    """
    if p.vocab_size != q.vocab_size:
        raise ValueError(f"vocab mismatch: {p.vocab_size} vs {q.vocab_size}")
    lam = params.lam
    # log min(q_i, p_i/lam); -inf on either side propagates correctly.
    log_kept_unnorm = np.minimum(q.log_probs, p.log_probs - math.log(lam))
    log_z = logsumexp(log_kept_unnorm)
    if log_z == -math.inf:
        raise ValueError("Z underflowed to 0: target and proposal do not overlap")
    kept = Categorical(log_kept_unnorm - log_z)
    return PostRejection(
        accept_probs=_accept_prob_vector(p, q, lam),
        z=math.exp(log_z),
        kept_dist=kept,
    )


def _effective_ratios(p: Categorical, q: Categorical):
    """Tokens contributing to Z: q > 0 and p > 0, with their ratios p/q.

    Tokens with q = 0 are never proposed; tokens with p = 0 contribute
    min(q, 0) = 0 for every lam.  Both drop out of the piecewise solve.
    """
    mask = (q.log_probs > -math.inf) & (p.log_probs > -math.inf)
    p_v = np.exp(p.log_probs[mask])
    q_v = np.exp(q.log_probs[mask])
    ratios = clamped_exp(p.log_probs[mask] - q.log_probs[mask])
    return p_v, q_v, ratios


def _z_at(p: Categorical, q: Categorical, lam: float) -> float:
    return float(np.sum(np.exp(np.minimum(q.log_probs, p.log_probs - math.log(lam)))))


def solve_lambda_for_budget(p: Categorical, q: Categorical, budget: float) -> ObrsParams:
    """Find lam with Z(lam) = budget, exploiting Z's piecewise structure.

    Z(lam) is continuous, non-increasing, and hyperbolic in 1/lam between
    breakpoints at the sorted ratios p_i/q_i: on the segment above the j-th
    distinct ratio, ``Z(lam) = P_j / lam + Q_j`` with ``P_j`` the target mass
    at ratios <= that breakpoint and ``Q_j`` the proposal mass above it.  Each
    segment is solved in closed form.  ``budget = 1`` (or any budget at the
    feasible supremum) returns the largest lam achieving it, i.e. the minimum
    positive-mass ratio.
    """
    if p.vocab_size != q.vocab_size:
        raise ValueError(f"vocab mismatch: {p.vocab_size} vs {q.vocab_size}")
    if not (0 < budget <= 1):
        raise ValueError(f"budget must lie in (0, 1], got {budget}")
    p_v, q_v, ratios = _effective_ratios(p, q)
    if p_v.size == 0:
        raise ValueError("budget infeasible: target and proposal do not overlap")
    z_sup = float(np.sum(q_v))  # Z(lam) for all lam <= min ratio
    if budget > z_sup + 1e-12:
        raise ValueError(
            f"budget {budget} infeasible: proposal mass on the target's support "
            f"is only {z_sup}"
        )

    # Group duplicate ratios so every segment has positive width.
    order = np.argsort(ratios, kind="stable")
    r_sorted = ratios[order]
    p_sorted = p_v[order]
    q_sorted = q_v[order]
    distinct, first_idx = np.unique(r_sorted, return_index=True)
    # Prefix target mass at ratios <= breakpoint, suffix proposal mass above it.
    p_cum = np.cumsum(p_sorted)
    q_cum = np.cumsum(q_sorted)
    bounds = np.append(first_idx[1:], r_sorted.size) - 1
    prefix_p = p_cum[bounds]  # P_j for each distinct breakpoint j
    suffix_q = float(q_cum[-1]) - q_cum[bounds]  # Q_j above breakpoint j

    if budget >= z_sup - 1e-12:
        return ObrsParams(float(distinct[0]))

    n = distinct.size
    for j in range(n):
        upper = distinct[j + 1] if j + 1 < n else math.inf
        denom = budget - suffix_q[j]
        if denom <= 0:
            continue
        lam = prefix_p[j] / denom
        if distinct[j] <= lam <= upper or math.isclose(lam, distinct[j], rel_tol=1e-12):
            lam = float(lam)
            if abs(_z_at(p, q, lam) - budget) <= 1e-10:
                return ObrsParams(lam)
            # Pathological rounding: polish within the bracketing segment.
            lo, hi = float(distinct[j]), float(min(upper, lam * 2 + 1))
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if _z_at(p, q, mid) > budget:
                    lo = mid
                else:
                    hi = mid
            return ObrsParams(0.5 * (lo + hi))
    raise ValueError(f"no segment matched budget {budget}; solver invariant violated")


def kl_curve(p: Categorical, q: Categorical, lambdas) -> list[KlCurvePoint]:
    """G(lam) = KL(p || kept) over an increasing lam grid, with diagnostics.

    ``mass_b`` is the target mass on tokens whose ratio p/q is <= lam — the
    set whose acceptance is still being scaled down, which controls the
    strictness of the KL decrease.
    """
    lams = np.asarray(lambdas, dtype=np.float64)
    if lams.ndim != 1 or lams.size == 0:
        raise ValueError("lambdas must be a non-empty 1-D sequence")
    if np.any(lams <= 0) or np.any(np.diff(lams) <= 0):
        raise ValueError("lambdas must be strictly increasing and positive")
    points = []
    for lam in lams:
        pr = post_rejection(p, q, ObrsParams(float(lam)))
        g = kl_divergence(p, pr.kept_dist)
        # ratio <= lam in log space; q = 0 tokens have ratio +inf (never in B).
        with np.errstate(invalid="ignore"):
            in_b = (p.log_probs - q.log_probs) <= math.log(lam)
        mass_b = float(np.sum(np.exp(p.log_probs[in_b & (p.log_probs > -math.inf)])))
        points.append(KlCurvePoint(c=float(lam), g=g, mass_b=mass_b, z=pr.z))
    return points


#: Cap on the expected number of proposals obrs_sample may need.
SAMPLE_PROPOSAL_CAP = 10**8

#: Distinct counter streams for the sampler's token and acceptance draws.
_STREAM_TOKEN = 0
_STREAM_ACCEPT = 1


def obrs_sample(
    q: Categorical,
    p: Categorical,
    params: ObrsParams,
    n_accept: int,
    seed: int,
    block: int = 65536,
) -> np.ndarray:
    """Sample from q and filter through the acceptance rule until ``n_accept``.

    Draws are keyed by a global proposal counter, so the accepted sequence is
    a pure function of ``seed`` no matter how the loop is blocked.
    """
    if n_accept < 1:
        raise ValueError(f"n_accept must be >= 1, got {n_accept}")
    pr = post_rejection(p, q, params)
    expected = n_accept / pr.z
    if expected > SAMPLE_PROPOSAL_CAP:
        raise ValueError(
            f"budget infeasible: expected {expected:.3g} proposals exceeds cap "
            f"{SAMPLE_PROPOSAL_CAP}"
        )
    cdf = np.cumsum(np.exp(q.log_probs))
    accept = pr.accept_probs
    out: list[np.ndarray] = []
    collected = 0
    counter = 0
    while collected < n_accept:
        u_tok = uniform_counter_block(seed, _STREAM_TOKEN, counter, block)
        u_acc = uniform_counter_block(seed, _STREAM_ACCEPT, counter, block)
        counter += block
        tokens = np.searchsorted(cdf, u_tok, side="right")
        np.clip(tokens, 0, q.vocab_size - 1, out=tokens)
        kept = tokens[u_acc < accept[tokens]]
        out.append(kept)
        collected += kept.size
        if counter > 64 * SAMPLE_PROPOSAL_CAP:
            raise ValueError("proposal cap exhausted without reaching n_accept")
    return np.concatenate(out)[:n_accept]


def batch_z_complement(
    target_log_probs: np.ndarray, proposal_log_probs: np.ndarray, lam: float
) -> np.ndarray:
    """Exact Z for rows of log-probs, computed as 1 - sum(max(0, q - p/lam)).

    Algebraically identical to ``sum(min(q, p/lam))`` for normalized rows, but
    with the property that matched rows at ``lam = 1`` give exactly 1.0 in
    floating point (every excess term is exactly zero).  The training testbed
    relies on that exactness for its on-policy fixed point.
    """
    p = clamped_exp(np.asarray(target_log_probs, dtype=np.float64))
    q = clamped_exp(np.asarray(proposal_log_probs, dtype=np.float64))
    excess = np.maximum(0.0, q - p / lam)
    return 1.0 - excess.sum(axis=-1)
