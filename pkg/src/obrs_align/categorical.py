"""Numerically stable categorical-distribution algebra.

All probability state lives in log space as float64 arrays; exact-zero mass
is represented as ``-inf`` log-probability.  Ratios are formed as
``exp(logp - logq)`` with the exponent clamped to ``[-700, 700]`` so that
spiky rare-token ratios saturate instead of overflowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EXP_CLAMP",
    "Categorical",
    "SparseTopK",
    "SimPairConfig",
    "logsumexp",
    "clamped_exp",
    "make_categorical",
    "from_logits",
    "kl_divergence",
    "total_variation",
    "top_k",
    "dirichlet_pair",
]

#: Exponent clamp for exp(log-ratio) evaluation; exp(±700) stays finite in float64.
EXP_CLAMP = 700.0

#: Tolerance on |logsumexp(log_probs)| for a distribution to count as normalized.
NORMALIZATION_TOL = 1e-9


def logsumexp(values: np.ndarray) -> float:
    """log(sum(exp(values))) tolerating -inf entries (empty mass -> -inf)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return -math.inf
    m = float(np.max(values))
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.sum(np.exp(values - m))))


def clamped_exp(exponents: np.ndarray | float) -> np.ndarray | float:
    """exp with finite exponents clamped to [-EXP_CLAMP, EXP_CLAMP].

    ``-inf`` is preserved (exact-zero mass stays exactly zero); huge finite
    exponents saturate at exp(+-700) instead of overflowing.
    """
    arr = np.asarray(exponents, dtype=np.float64)
    clipped = np.where(arr == -math.inf, arr, np.clip(arr, -EXP_CLAMP, EXP_CLAMP))
    return np.exp(clipped)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Categorical:
    """A normalized distribution over token ids ``0..V-1``, stored as log-probs.

    Invariants (checked at construction): entries finite or ``-inf``,
    ``|logsumexp| <= 1e-9``, and ``V >= 2``.
    """

    log_probs: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.log_probs, np.float64)
        if arr.ndim != 1 or arr.shape[0] < 2:
            raise ValueError(f"need a 1-D vector with at least 2 tokens, got shape {arr.shape}")
        if np.any(np.isnan(arr)) or np.any(arr == math.inf):
            raise ValueError("log-probabilities must be finite or -inf")
        total = logsumexp(arr)
        if not abs(total) <= NORMALIZATION_TOL:
            raise ValueError(f"log-probs not normalized: logsumexp = {total!r}")
        object.__setattr__(self, "log_probs", arr)

    @property
    def vocab_size(self) -> int:
        return int(self.log_probs.shape[0])

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class SparseTopK:
    """Top-k side information: ``(token_id, log_prob)`` entries.

    Entries are sorted by descending log-prob with ties broken by ascending
    token id; ids are unique and non-negative; total mass ``<= 1 + 1e-9``.
    """

    token_ids: np.ndarray
    log_probs: np.ndarray

    def __post_init__(self) -> None:
        ids = _frozen_array(self.token_ids, np.int64)
        lps = _frozen_array(self.log_probs, np.float64)
        if ids.ndim != 1 or lps.ndim != 1 or ids.shape != lps.shape:
            raise ValueError("token_ids and log_probs must be 1-D and the same length")
        if ids.shape[0] == 0:
            raise ValueError("k = 0: top-k list may not be empty")
        if np.unique(ids).shape[0] != ids.shape[0]:
            raise ValueError("duplicate token ids in top-k list")
        if np.any(ids < 0):
            raise ValueError("token ids must be non-negative")
        if np.any(np.isnan(lps)) or np.any(lps == math.inf):
            raise ValueError("top-k log-probs must be finite or -inf")
        a, b = lps[:-1], lps[1:]
        if not bool(np.all((a > b) | ((a == b) & (ids[:-1] < ids[1:])))):
            raise ValueError("entries must be sorted by descending log_prob, ties by ascending id")
        mass = float(np.sum(np.exp(lps)))
        if mass > 1.0 + 1e-9:
            raise ValueError(f"top-k mass {mass} exceeds 1 + 1e-9")
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "log_probs", lps)

    @property
    def k(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(lp)) for i, lp in zip(self.token_ids, self.log_probs)]


@dataclass(frozen=True)
class SimPairConfig:
    """Controls :func:`dirichlet_pair`: a Dirichlet draw plus log-space noise."""

    vocab_size: int
    dirichlet_alpha: float = 1.0
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not (self.dirichlet_alpha > 0 and math.isfinite(self.dirichlet_alpha)):
            raise ValueError(f"dirichlet_alpha must be positive, got {self.dirichlet_alpha}")
        if not (self.noise_scale >= 0 and math.isfinite(self.noise_scale)):
            raise ValueError(f"noise_scale must be non-negative, got {self.noise_scale}")


def make_categorical(probs) -> Categorical:
    """Normalize a vector of non-negative weights into a :class:`Categorical`."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValueError(f"need at least 2 entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("entries must be finite")
    if np.any(arr < 0):
        raise ValueError("entries must be non-negative")
    total = float(np.sum(arr))
    if total <= 0:
        raise ValueError("total mass must be positive")
    with np.errstate(divide="ignore"):
        log_unnorm = np.log(arr)
    return Categorical(log_unnorm - logsumexp(log_unnorm))


def from_logits(logits) -> Categorical:
    """Normalize arbitrary real (or -inf) logits into a :class:`Categorical`."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValueError(f"need at least 2 entries, got shape {arr.shape}")
    if np.any(np.isnan(arr)) or np.any(arr == math.inf):
        raise ValueError("logits must be finite or -inf")
    total = logsumexp(arr)
    if total == -math.inf:
        raise ValueError("all logits are -inf")
    return Categorical(arr - total)


def _check_same_vocab(p: Categorical, q: Categorical) -> None:
    if p.vocab_size != q.vocab_size:
        raise ValueError(f"vocab mismatch: {p.vocab_size} vs {q.vocab_size}")


def kl_divergence(p: Categorical, q: Categorical) -> float:
    """KL(p || q) in nats; 0 * ln(0/q) = 0; raises where p > 0 but q = 0."""
    _check_same_vocab(p, q)
    pl, ql = p.log_probs, q.log_probs
    support = pl > -math.inf
    if np.any(ql[support] == -math.inf):
        bad = int(np.argmax(support & (ql == -math.inf)))
        raise ValueError(f"KL undefined: p[{bad}] > 0 but q[{bad}] = 0")
    diff = pl[support] - ql[support]
    return float(np.sum(np.exp(pl[support]) * diff))


def total_variation(p: Categorical, q: Categorical) -> float:
    """Total-variation distance, 0.5 * sum |p_i - q_i|."""
    _check_same_vocab(p, q)
    return 0.5 * float(np.sum(np.abs(p.probs - q.probs)))


def top_k(dist: Categorical, k: int) -> SparseTopK:
    """The k highest-probability tokens; ties broken by ascending token id."""
    v = dist.vocab_size
    if not 1 <= k <= v:
        raise ValueError(f"k must be in [1, {v}], got {k}")
    # lexsort: last key is primary -> sort by descending log-prob, then ascending id.
    order = np.lexsort((np.arange(v), -dist.log_probs))[:k]
    return SparseTopK(order, dist.log_probs[order])


def dirichlet_pair(cfg: SimPairConfig) -> tuple[Categorical, Categorical]:
    """Draw p ~ Dirichlet(alpha) and a noisy companion q.

    q perturbs p's log-probabilities with iid N(0, noise_scale^2) noise and
    renormalizes; ``noise_scale = 0`` returns q identical to p.  Deterministic
    given the config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    weights = rng.dirichlet(np.full(cfg.vocab_size, cfg.dirichlet_alpha))
    p = make_categorical(weights)
    if cfg.noise_scale == 0.0:
        return p, p
    noise = cfg.noise_scale * rng.standard_normal(cfg.vocab_size)
    # -inf + finite noise stays -inf: zero-mass tokens remain zero-mass in q,
    # so q's support always covers p's and KL(p || q) is well defined.
    q = from_logits(p.log_probs + noise)
    return p, q
